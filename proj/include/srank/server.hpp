#pragma once

// HTTP scoring service. Request handling is a pure function of the request
// body and the read-only configuration, so it is tested without sockets;
// RewardServer only wires it to httplib.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

// httplib's default backlog of 5 drops bursts of concurrent clients. The
// macro only takes effect if this header is seen before httplib.h.
#ifndef CPPHTTPLIB_LISTEN_BACKLOG
#define CPPHTTPLIB_LISTEN_BACKLOG 256
#endif
#include "httplib.h"
#if CPPHTTPLIB_LISTEN_BACKLOG < 64
#error "include srank/server.hpp before httplib.h, or define CPPHTTPLIB_LISTEN_BACKLOG >= 64"
#endif
#include "json.hpp"
#include "srank/error.hpp"
#include "srank/hidden_io.hpp"
#include "srank/npy.hpp"
#include "srank/spectral.hpp"

namespace srank::server {

inline constexpr std::string_view kServiceName = "srank";
inline constexpr std::string_view kServiceVersion = "0.1.0";

struct ServerConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::filesystem::path> allow_roots;  // empty: no path access
  std::size_t max_inline_bytes = std::size_t{64} << 20;
  std::size_t oracle_cap = kOracleCap;
  std::size_t threads = 0;  // 0: httplib default
};

// Request failure carrying its HTTP status.
class HttpError : public Error {
 public:
  HttpError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

// RFC 4648 base64 (standard alphabet, '=' padding required for the tail).
inline std::vector<unsigned char> base64_decode(std::string_view in) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (in.size() % 4 != 0) throw ArgumentError("base64 length is not a multiple of 4");
  std::vector<unsigned char> out;
  out.reserve(in.size() / 4 * 3);
  for (std::size_t i = 0; i < in.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = in[i + k];
      if (c == '=' && i + 4 == in.size() && k >= 2) {
        v[k] = 0;
        ++pad;
      } else {
        if (pad) throw ArgumentError("base64 padding in the middle");
        v[k] = value(c);
        if (v[k] < 0) throw ArgumentError("invalid base64 character");
      }
    }
    const std::uint32_t n = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out.push_back(static_cast<unsigned char>(n >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>((n >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(n & 0xff));
  }
  return out;
}

inline std::string base64_encode(std::span<const unsigned char> in) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < in.size(); i += 3) {
    std::uint32_t n = static_cast<std::uint32_t>(in[i]) << 16;
    if (i + 1 < in.size()) n |= static_cast<std::uint32_t>(in[i + 1]) << 8;
    if (i + 2 < in.size()) n |= in[i + 2];
    out.push_back(kAlphabet[(n >> 18) & 63]);
    out.push_back(kAlphabet[(n >> 12) & 63]);
    out.push_back(i + 1 < in.size() ? kAlphabet[(n >> 6) & 63] : '=');
    out.push_back(i + 2 < in.size() ? kAlphabet[n & 63] : '=');
  }
  return out;
}

// 16 hex digits of FNV-1a over the bytes.
inline std::string request_id(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace detail {

inline std::filesystem::path checked_path(const std::string& raw, const ServerConfig& cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  const fs::path p = fs::weakly_canonical(fs::absolute(raw), ec);
  if (ec) throw HttpError(400, "unusable path: " + raw);
  for (const auto& root : cfg.allow_roots) {
    const fs::path r = fs::weakly_canonical(fs::absolute(root), ec);
    if (ec) continue;
    auto [ri, pi] = std::mismatch(r.begin(), r.end(), p.begin(), p.end());
    if (ri == r.end()) {
      if (!fs::exists(p)) throw HttpError(404, "no such file: " + raw);
      return p;
    }
  }
  throw HttpError(403, "path outside the allow-list: " + raw);
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw HttpError(400, std::string("missing field \"") + key + "\"");
  return *it;
}

inline HiddenMatrix decode_inline(const nlohmann::json& req, const ServerConfig& cfg) {
  const auto& data = field(req, "matrix_inline");
  if (!data.is_string()) throw HttpError(400, "\"matrix_inline\" must be a base64 string");
  const auto& shape = field(req, "shape");
  if (!shape.is_array() || shape.size() != 2 || !shape[0].is_number_unsigned() ||
      !shape[1].is_number_unsigned()) {
    throw HttpError(400, "\"shape\" must be [T, d] with non-negative integers");
  }
  const auto t = shape[0].get<std::size_t>();
  const auto d = shape[1].get<std::size_t>();
  if (t == 0 || d == 0) throw HttpError(400, "\"shape\" entries must be >= 1");
  const auto& b64 = data.get_ref<const std::string&>();
  if (b64.size() / 4 * 3 > cfg.max_inline_bytes) {
    throw HttpError(413, "inline payload exceeds " + std::to_string(cfg.max_inline_bytes) +
                             " bytes");
  }
  std::vector<unsigned char> bytes;
  try {
    bytes = base64_decode(b64);
  } catch (const ArgumentError& e) {
    throw HttpError(400, std::string("\"matrix_inline\": ") + e.what());
  }
  if (bytes.size() != t * d * 4) {
    throw HttpError(400, "\"matrix_inline\" has " + std::to_string(bytes.size()) +
                             " bytes, shape needs " + std::to_string(t * d * 4));
  }
  std::vector<double> values(t * d);
  for (std::size_t k = 0; k < values.size(); ++k) {
    values[k] = static_cast<double>(io::detail::read_le<float>(bytes.data() + 4 * k));
  }
  try {
    return {t, d, std::move(values)};
  } catch (const InputDomainError& e) {
    throw HttpError(400, std::string("\"matrix_inline\": ") + e.what());
  }
}

inline std::optional<io::TokenMask> decode_mask(const nlohmann::json& req,
                                                const ServerConfig& cfg) {
  const bool inline_mask = req.contains("mask") && !req["mask"].is_null();
  const bool path_mask = req.contains("mask_path") && !req["mask_path"].is_null();
  if (inline_mask && path_mask) throw HttpError(400, "give either \"mask\" or \"mask_path\"");
  if (inline_mask) {
    if (!req["mask"].is_string()) throw HttpError(400, "\"mask\" must be a base64 string");
    std::vector<unsigned char> bytes;
    try {
      bytes = base64_decode(req["mask"].get<std::string>());
    } catch (const ArgumentError& e) {
      throw HttpError(400, std::string("\"mask\": ") + e.what());
    }
    io::TokenMask m;
    for (unsigned char b : bytes) {
      if (b > 1) throw HttpError(400, "\"mask\" bytes must be 0 or 1");
      m.push_back(b == 1);
    }
    return m;
  }
  if (path_mask) {
    if (!req["mask_path"].is_string()) throw HttpError(400, "\"mask_path\" must be a string");
    const auto p = checked_path(req["mask_path"].get<std::string>(), cfg);
    try {
      return io::load_mask(p);
    } catch (const ParseError& e) {
      throw HttpError(400, std::string("mask file: ") + e.what());
    }
  }
  return std::nullopt;
}

}  // namespace detail

// decode -> mask -> truncate -> metric. Throws HttpError.
inline nlohmann::ordered_json score(const nlohmann::json& req, const ServerConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  if (!req.is_object()) throw HttpError(400, "request must be a JSON object");
  const bool has_inline = req.contains("matrix_inline");
  const bool has_path = req.contains("matrix_path");
  if (has_inline == has_path) {
    throw HttpError(400, "give exactly one of \"matrix_inline\" or \"matrix_path\"");
  }
  Metric metric = Metric::stable_rank;
  if (req.contains("metric")) {
    if (!req["metric"].is_string()) throw HttpError(400, "\"metric\" must be a string");
    auto m = parse_metric(req["metric"].get<std::string>());
    if (!m) throw HttpError(400, "unknown metric \"" + req["metric"].get<std::string>() + "\"");
    metric = *m;
  }
  std::optional<std::size_t> max_tokens;
  if (req.contains("max_tokens") && !req["max_tokens"].is_null()) {
    if (!req["max_tokens"].is_number_unsigned() || req["max_tokens"].get<std::size_t>() == 0) {
      throw HttpError(400, "\"max_tokens\" must be a positive integer");
    }
    max_tokens = req["max_tokens"].get<std::size_t>();
  }

  std::optional<HiddenMatrix> h;
  if (has_inline) {
    h = detail::decode_inline(req, cfg);
  } else {
    if (!req["matrix_path"].is_string()) throw HttpError(400, "\"matrix_path\" must be a string");
    const auto p = detail::checked_path(req["matrix_path"].get<std::string>(), cfg);
    try {
      h = io::load_matrix(p);
    } catch (const ParseError& e) {
      throw HttpError(400, std::string("matrix file: ") + e.what());
    } catch (const InputDomainError& e) {
      throw HttpError(400, std::string("matrix file: ") + e.what());
    }
  }
  const auto mask = detail::decode_mask(req, cfg);
  double value = 0.0;
  try {
    if (mask) h = io::apply_mask(*h, *mask);
    if (max_tokens) h = io::truncate(*h, *max_tokens);
    if (metric != Metric::stable_rank && h->min_dim() > cfg.oracle_cap) {
      throw CapacityError("min(T, d) exceeds the configured oracle cap");
    }
    value = metric_value(*h, metric);
  } catch (const DegenerateInputError& e) {
    throw HttpError(422, e.what());
  } catch (const CapacityError& e) {
    throw HttpError(413, e.what());
  } catch (const ArgumentError& e) {
    throw HttpError(400, e.what());
  }
  const double ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  nlohmann::ordered_json out;
  out["id"] = req.contains("id") ? req["id"] : nlohmann::json(nullptr);
  out["value"] = value;
  out["metric"] = metric_name(metric);
  out["t_used"] = h->rows();
  out["compute_ms"] = ms;
  return out;
}

struct Reply {
  int status = 200;
  std::string body;
  std::string request_id;
};

inline Reply error_reply(int status, const std::string& msg, const std::string& rid) {
  nlohmann::ordered_json j = {{"error", msg}, {"status", status}, {"request_id", rid}};
  return {status, j.dump(), rid};
}

inline Reply handle_score(std::string_view body, const ServerConfig& cfg) {
  const std::string rid = request_id(body);
  try {
    auto req = nlohmann::json::parse(body);
    auto out = score(req, cfg);
    out["request_id"] = rid;
    return {200, out.dump(), rid};
  } catch (const nlohmann::json::parse_error& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what(), rid);
  } catch (const HttpError& e) {
    return error_reply(e.status(), e.what(), rid);
  } catch (const std::exception& e) {
    return error_reply(500, e.what(), rid);
  }
}

// Order-preserving; the first failing item fails the whole batch.
inline Reply handle_score_batch(std::string_view body, const ServerConfig& cfg) {
  const std::string rid = request_id(body);
  try {
    auto req = nlohmann::json::parse(body);
    if (!req.is_array()) throw HttpError(400, "batch body must be a JSON array");
    nlohmann::ordered_json out = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < req.size(); ++i) {
      try {
        auto item = score(req[i], cfg);
        item["request_id"] = request_id(req[i].dump());
        out.push_back(std::move(item));
      } catch (const HttpError& e) {
        throw HttpError(e.status(), "item " + std::to_string(i) + ": " + e.what());
      }
    }
    return {200, out.dump(), rid};
  } catch (const nlohmann::json::parse_error& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what(), rid);
  } catch (const HttpError& e) {
    return error_reply(e.status(), e.what(), rid);
  } catch (const std::exception& e) {
    return error_reply(500, e.what(), rid);
  }
}

inline std::string health_body(const ServerConfig& cfg) {
  nlohmann::ordered_json j = {{"status", "ok"},
                              {"service", kServiceName},
                              {"version", kServiceVersion},
                              {"oracle_cap", cfg.oracle_cap},
                              {"max_inline_bytes", cfg.max_inline_bytes}};
  return j.dump();
}

class RewardServer {
 public:
  explicit RewardServer(ServerConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.threads > 0) {
      const std::size_t n = cfg_.threads;
      server_.new_task_queue = [n] { return new httplib::ThreadPool(n); };
    }
    // Base64 inflates by 4/3; leave room for the JSON envelope.
    server_.set_payload_max_length(cfg_.max_inline_bytes / 3 * 4 + (std::size_t{1} << 20));
    auto send = [](httplib::Response& res, const Reply& r) {
      res.status = r.status;
      res.set_header("X-Request-Id", r.request_id);
      res.set_content(r.body, "application/json");
    };
    server_.Post("/v1/score", [this, send](const httplib::Request& req, httplib::Response& res) {
      send(res, handle_score(req.body, cfg_));
    });
    server_.Post("/v1/score_batch",
                 [this, send](const httplib::Request& req, httplib::Response& res) {
                   send(res, handle_score_batch(req.body, cfg_));
                 });
    server_.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
      const auto body = health_body(cfg_);
      res.set_header("X-Request-Id", request_id(body));
      res.set_content(body, "application/json");
    });
  }

  RewardServer(const RewardServer&) = delete;
  RewardServer& operator=(const RewardServer&) = delete;

  // Binds the configured port (0 picks a free one) and returns it.
  int bind() {
    if (cfg_.port == 0) {
      port_ = server_.bind_to_any_port(cfg_.host);
    } else {
      port_ = server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
    }
    if (port_ < 0) throw Error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
    return port_;
  }

  // Blocks until stop().
  bool run() { return server_.listen_after_bind(); }

  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }
  int port() const noexcept { return port_; }
  const ServerConfig& config() const noexcept { return cfg_; }

 private:
  ServerConfig cfg_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace srank::server
