#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "srank/error.hpp"
#include "srank/matrix.hpp"
#include "srank/npy.hpp"

namespace srank::io {

using TokenMask = std::vector<bool>;

// Rows of `h` whose mask entry is true, in order.
inline HiddenMatrix apply_mask(const HiddenMatrix& h, const TokenMask& mask) {
  if (mask.size() != h.rows()) {
    throw ArgumentError("mask length " + std::to_string(mask.size()) +
                        " does not match T = " + std::to_string(h.rows()));
  }
  std::vector<double> kept;
  std::size_t n = 0;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    if (!mask[i]) continue;
    const auto r = h.row(i);
    kept.insert(kept.end(), r.begin(), r.end());
    ++n;
  }
  if (n == 0) throw DegenerateInputError("mask selects no tokens");
  return {n, h.cols(), std::move(kept)};
}

// First min(T, max_tokens) rows.
inline HiddenMatrix truncate(const HiddenMatrix& h, std::size_t max_tokens) {
  if (max_tokens == 0) throw ArgumentError("max_tokens must be >= 1");
  if (h.rows() <= max_tokens) return h;
  const auto d = h.data();
  return {max_tokens, h.cols(),
          std::vector<double>(d.begin(), d.begin() + max_tokens * h.cols())};
}

enum class Role { chosen, rejected, candidate };

inline std::string_view role_name(Role r) noexcept {
  switch (r) {
    case Role::chosen: return "chosen";
    case Role::rejected: return "rejected";
    case Role::candidate: return "candidate";
  }
  return "";
}

struct ManifestRecord {
  std::string id;
  std::string category;
  Role role = Role::candidate;
  std::optional<int> candidate_index;
  std::filesystem::path matrix_path;
  std::optional<std::filesystem::path> mask_path;
  std::map<std::string, std::string> metadata;
};

class ManifestError : public ParseError {
 public:
  ManifestError(std::size_t line, const std::string& what)
      : ParseError("line " + std::to_string(line), what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

namespace detail {

inline std::string require_string(const nlohmann::json& j, const char* key,
                                  std::size_t line) {
  auto it = j.find(key);
  if (it == j.end()) throw ManifestError(line, std::string("missing \"") + key + "\"");
  if (!it->is_string()) {
    throw ManifestError(line, std::string("\"") + key + "\" must be a string");
  }
  return it->get<std::string>();
}

inline ManifestRecord parse_record(const nlohmann::json& j, std::size_t line,
                                   const std::filesystem::path& base) {
  if (!j.is_object()) throw ManifestError(line, "record is not a JSON object");
  ManifestRecord r;
  r.id = require_string(j, "id", line);
  if (r.id.empty()) throw ManifestError(line, "\"id\" is empty");
  if (j.contains("category")) {
    r.category = require_string(j, "category", line);
  }
  const std::string role = require_string(j, "role", line);
  if (role == "chosen") {
    r.role = Role::chosen;
  } else if (role == "rejected") {
    r.role = Role::rejected;
  } else if (role == "candidate") {
    r.role = Role::candidate;
  } else {
    throw ManifestError(line, "unknown role \"" + role + "\"");
  }
  if (auto it = j.find("candidate_index"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<long long>() < 0) {
      throw ManifestError(line, "\"candidate_index\" must be a non-negative integer");
    }
    r.candidate_index = it->get<int>();
  }
  if (r.candidate_index.has_value() != (r.role == Role::candidate)) {
    throw ManifestError(line, "\"candidate_index\" is required iff role is candidate");
  }
  std::filesystem::path mp = require_string(j, "matrix_path", line);
  r.matrix_path = mp.is_absolute() ? mp : base / mp;
  if (auto it = j.find("mask_path"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw ManifestError(line, "\"mask_path\" must be a string");
    std::filesystem::path kp = it->get<std::string>();
    r.mask_path = kp.is_absolute() ? kp : base / kp;
  }
  if (auto it = j.find("metadata"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw ManifestError(line, "\"metadata\" must be an object");
    for (const auto& [k, v] : it->items()) {
      r.metadata[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
  }
  return r;
}

}  // namespace detail

// Parses line-delimited JSON. Relative paths resolve against `base`.
// Files are not touched here; missing matrices surface in load_record.
inline std::vector<ManifestRecord> parse_manifest(std::istream& in,
                                                  const std::filesystem::path& base) {
  std::vector<ManifestRecord> out;
  std::set<std::tuple<std::string, Role, int>> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ManifestError(line, std::string("malformed JSON: ") + e.what());
    }
    auto rec = detail::parse_record(j, line, base);
    if (!seen.emplace(rec.id, rec.role, rec.candidate_index.value_or(-1)).second) {
      throw ManifestError(line, "duplicate record for id \"" + rec.id + "\"");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<ManifestRecord> load_manifest(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open manifest " + p.string());
  return parse_manifest(in, p.parent_path());
}

// Loads the record's matrix, applies its mask when present, then truncates.
inline HiddenMatrix load_record(const ManifestRecord& r,
                                std::optional<std::size_t> max_tokens = {}) {
  if (!std::filesystem::exists(r.matrix_path)) {
    throw Error("record \"" + r.id + "\": matrix_path does not exist: " +
                r.matrix_path.string());
  }
  HiddenMatrix h = load_matrix(r.matrix_path);
  if (r.mask_path) h = apply_mask(h, load_mask(*r.mask_path));
  if (max_tokens) h = truncate(h, *max_tokens);
  return h;
}

}  // namespace srank::io
