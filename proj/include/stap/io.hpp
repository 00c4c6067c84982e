#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "stap/memory.hpp"
#include "stap/model.hpp"

namespace stap {

// 64-bit FNV-1a.
std::uint64_t fnv1a(const void* data, std::size_t len);
std::uint64_t fnv1a_file(const std::string& path);  // DataError on I/O failure
std::uint64_t fnv1a_tensor(const Tensor& t);

/// Round-trip-exact decimal text for a double.
std::string fmt_double(double x);

std::vector<std::string> split_csv_line(const std::string& line);

/// CSV with a leading `# seed=<seed>` comment line and a fixed header.
class CsvWriter {
  public:
    CsvWriter(const std::string& path, const std::string& header, std::uint64_t seed);
    void row(const std::vector<std::string>& cells);
    void close();

  private:
    std::ofstream out_;
    std::string path_;
    std::size_t cols_ = 0;
};

// Versioned binary dumps, little-endian 64-bit payloads.
void save_bank(const std::string& path, const MemoryBank& bank);
MemoryBank load_bank(const std::string& path);

/// Checkpoint carries every named Param (serialization order of
/// StapModel::all_params) plus the bank.
void save_checkpoint(const std::string& path, StapModel& model);
void load_checkpoint(const std::string& path, StapModel& model);

/// manifest.json: seed, effective config echo, FNV-1a checksums of the listed
/// artifacts; `volatile_files` (wall-clock measurements) are listed without a
/// checksum. No timestamps.
void write_manifest(const std::string& out_dir,
                    const std::map<std::string, std::string>& config_echo,
                    std::uint64_t seed, const std::vector<std::string>& artifact_files,
                    const std::vector<std::string>& volatile_files);

}  // namespace stap
