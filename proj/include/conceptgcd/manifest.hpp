#pragma once
// Run manifest: a JSON record of everything needed to reproduce a run
// (command, config, seed, input file hashes, outputs, headline metrics).
// Written atomically next to the run's primary output.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "conceptgcd/errors.hpp"

namespace conceptgcd {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a 64-bit over the file's bytes, rendered as 16 hex digits.
inline std::string fnv1a_file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for hashing");
  std::uint64_t h = 1469598103934665603ULL;
  char buf[1 << 15];
  while (in) {
    in.read(buf, sizeof buf);
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;   // hashed at write time
  std::vector<std::string> outputs;  // paths produced by the run
  nlohmann::ordered_json metrics;    // headline numbers, may be empty

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["tool_version"] = kToolVersion;
    j["command"] = command;
    j["seed"] = seed;
    j["config"] = config;
    nlohmann::ordered_json ins = nlohmann::ordered_json::object();
    for (const std::string& p : inputs) ins[p] = fnv1a_file_hash(p);
    j["inputs"] = ins;
    j["outputs"] = outputs;
    j["metrics"] = metrics.is_null() ? nlohmann::ordered_json::object() : metrics;
    return j;
  }

  // Staged at <path>.tmp then renamed, so a crash never leaves a partial
  // manifest at the final path.
  void write(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      if (!out) throw IoError("cannot open " + tmp + " for writing");
      out << to_json().dump(2) << "\n";
      out.flush();
      if (!out) throw IoError("failed writing " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
      throw IoError("cannot rename " + tmp + " to " + path);
  }
};

}  // namespace conceptgcd
