#pragma once

// Minimal CSV output and input for the run and analysis artifacts. Fields
// never contain commas or quotes, so no quoting is done.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace grok {

/// Fixed-point rendering with `digits` decimals ("nan" for NaN).
std::string fixed(double v, int digits);
/// Shortest round-trippable rendering.
std::string exact(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header,
            bool append = false);
  void row(const std::vector<std::string>& fields);
  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::size_t width_;
  std::string label_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const;
  /// Column index; throws std::runtime_error when absent.
  std::size_t require(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace grok
