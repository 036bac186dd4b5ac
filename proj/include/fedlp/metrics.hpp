#pragma once

// Communication accounting and the per-round metrics stream.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "pruning.hpp"

namespace fedlp {

struct RoundMetrics {
  std::size_t round = 0;
  bool evaluated = false;
  double test_accuracy = 0.0;
  std::uint64_t upload_params = 0;
  std::uint64_t download_params = 0;
  std::vector<std::uint64_t> per_client_flops;
  double wallclock = 0.0;  // seconds; 0 unless timing is enabled
  std::optional<double> personal_accuracy;  // hetero runs only, auxiliary

  double mean_flops() const {
    if (per_client_flops.empty()) return 0.0;
    const auto total = std::accumulate(per_client_flops.begin(), per_client_flops.end(), std::uint64_t{0});
    return static_cast<double>(total) / static_cast<double>(per_client_flops.size());
  }
};

struct CommTotals {
  std::uint64_t upload = 0;
  std::uint64_t download = 0;
};

/// Upload is the exact size of every payload; download is layers 1..L_k of
/// the global model per participant (L_k = L for homogeneous clients).
inline CommTotals comm_accounting(std::span<const PrunedPayload> payloads, const LayeredModel& global,
                                  std::span<const std::size_t> participant_layer_counts) {
  CommTotals t;
  for (const auto& p : payloads) t.upload += p.param_count();
  for (std::size_t lk : participant_layer_counts) {
    const auto layers = layer_range(1, lk);
    t.download += param_count(global, std::span<const std::size_t>(layers));
  }
  return t;
}

/// Running communication totals across a run.
class CommLedger {
 public:
  void record(const CommTotals& round, std::size_t participants) {
    upload_ += round.upload;
    download_ += round.download;
    participants_ += participants;
    ++rounds_;
  }

  std::uint64_t total_upload() const noexcept { return upload_; }
  std::uint64_t total_download() const noexcept { return download_; }
  std::size_t rounds() const noexcept { return rounds_; }

  /// Mean (upload + download) per global epoch.
  double mean_per_round() const {
    return rounds_ == 0 ? 0.0 : static_cast<double>(upload_ + download_) / static_cast<double>(rounds_);
  }

  /// Mean (upload + download) per participating client.
  double mean_per_participant() const {
    return participants_ == 0 ? 0.0
                              : static_cast<double>(upload_ + download_) / static_cast<double>(participants_);
  }

 private:
  std::uint64_t upload_ = 0;
  std::uint64_t download_ = 0;
  std::size_t participants_ = 0;
  std::size_t rounds_ = 0;
};

inline constexpr const char* kCsvHeader = "round,test_accuracy,upload_params,download_params,mean_flops,wallclock_s";

inline std::string csv_row(const RoundMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.6f,%llu,%llu,%.3f,%.6f", m.round, m.test_accuracy,
                static_cast<unsigned long long>(m.upload_params), static_cast<unsigned long long>(m.download_params),
                m.mean_flops(), m.wallclock);
  return buf;
}

/// Header plus one row per evaluated round.
inline std::string format_csv(std::span<const RoundMetrics> stream) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& m : stream)
    if (m.evaluated) {
      out += csv_row(m);
      out += '\n';
    }
  return out;
}

inline void emit_csv(std::span<const RoundMetrics> stream, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_csv(stream);
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace fedlp
