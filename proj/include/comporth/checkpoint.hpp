#pragma once

// Checkpoint container: one JSON header line (config, shapes, loss
// history), then the raw little-endian f32 parameter payload in header
// order. Reruns with the same seed produce byte-identical files.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "comporth/error.hpp"
#include "comporth/optimizer.hpp"

namespace comporth {

template <typename T>
void write_checkpoint(const std::string& path, const nlohmann::json& meta,
                      const ParamStore<T>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  nlohmann::json header = meta;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, p] : store.params)
    params.push_back({{"name", name}, {"shape", p.shape}});
  header["params"] = params;
  os << header.dump() << "\n";
  for (const auto& [name, p] : store.params) {
    std::vector<float> buf(p.v.begin(), p.v.end());
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
}

// Returns the header; fills `store` with the payload when non-null.
template <typename T>
nlohmann::json read_checkpoint(const std::string& path, ParamStore<T>* store) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::string header_line;
  if (!std::getline(is, header_line)) throw IoError("checkpoint missing header: " + path);
  nlohmann::json header = nlohmann::json::parse(header_line);
  if (store) {
    for (const auto& entry : header.at("params")) {
      const std::string name = entry.at("name").get<std::string>();
      const std::vector<long> shape = entry.at("shape").get<std::vector<long>>();
      Tensor<T> p(shape);
      std::vector<float> buf(static_cast<size_t>(p.size()));
      is.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (is.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw IoError("checkpoint payload truncated at " + name + ": " + path);
      for (long i = 0; i < p.size(); ++i) p[i] = static_cast<T>(buf[static_cast<size_t>(i)]);
      if (store->params.count(name))
        store->params.at(name) = std::move(p);
      else
        store->add(name, std::move(p));
    }
  }
  return header;
}

}  // namespace comporth
