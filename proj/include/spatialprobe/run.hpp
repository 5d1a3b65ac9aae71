#pragma once

// Run bookkeeping for the command-line driver: manifest records, output
// directory locks and timestamps.

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "spatialprobe/error.hpp"
#include "spatialprobe/hash.hpp"
#include "spatialprobe/text.hpp"

#ifndef SPATIALPROBE_VERSION
#define SPATIALPROBE_VERSION "0.0.0"
#endif

namespace spatialprobe {

inline constexpr const char* kToolVersion = SPATIALPROBE_VERSION;
inline constexpr const char* kCacheEnv = "SPATIALPROBE_CACHE";

/// Exclusive lock on an output directory, released on destruction.
class DirectoryLock {
 public:
  explicit DirectoryLock(const std::filesystem::path& dir) : path_(dir / ".spatialprobe.lock") {
    std::filesystem::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0)
      throw Error("output directory '" + dir.string() + "' is locked by another run (" + path_.string() + ")");
    auto pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(path_, ec);
    }
  }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

/// UTC ISO-8601 time; SOURCE_DATE_EPOCH pins it for reproducible runs.
inline std::string timestamp_now() {
  std::time_t t;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline std::string hash_file(const std::filesystem::path& p) { return sha256_hex(text::read_file(p)); }

/// Record written next to every command's outputs.
struct RunManifestRecord {
  std::string command;
  nlohmann::json config;
  std::string dataset_hash;
  std::map<std::string, std::string> outputs;  // file name -> sha256
  std::string started_at, finished_at;
  nlohmann::json extra = nlohmann::json::object();

  std::string config_hash() const { return sha256_hex(config.dump()); }

  nlohmann::json to_json() const {
    return {{"command", command},       {"config", config},         {"config_hash", config_hash()},
            {"dataset_hash", dataset_hash}, {"outputs", outputs},   {"started_at", started_at},
            {"finished_at", finished_at}, {"tool_version", kToolVersion}, {"extra", extra}};
  }
};

/// Writes an output file and records its hash.
inline void emit(RunManifestRecord& rec, const std::filesystem::path& dir, const std::string& name,
                 const std::string& content) {
  text::write_file(dir / name, content);
  rec.outputs[name] = sha256_hex(content);
}

}  // namespace spatialprobe
