#pragma once

#include "geobeam/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace geobeam {

// shortest round-trippable decimal form; deterministic across runs
std::string format_double(double v);

class CsvBuilder {
  public:
    explicit CsvBuilder(std::string header_comment = "") {
        if (!header_comment.empty()) out_ += "# " + header_comment + "\n";
    }
    void header(const std::vector<std::string>& cols);
    void row_start() { first_in_row_ = true; }
    void cell(const std::string& s);
    void cell(double v) { cell(format_double(v)); }
    void cell(std::size_t v) { cell(std::to_string(v)); }
    void cell(int v) { cell(std::to_string(v)); }
    void row_end() { out_ += "\n"; }
    const std::string& str() const { return out_; }

  private:
    std::string out_;
    bool first_in_row_ = true;
};

void write_file(const std::string& path, const std::string& content);
std::string read_file(const std::string& path);

// FNV-1a over bytes
std::uint64_t content_hash(const std::string& bytes);
std::string hash_hex(std::uint64_t h);

}  // namespace geobeam
