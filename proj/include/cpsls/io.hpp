#pragma once

#include "cpsls/common.hpp"
#include "cpsls/mpc.hpp"

#include <string>

namespace cpsls::io {

/// Column-major labeled dynamics samples: column i holds one transition
/// (states.col(i), controls.col(i)) -> next_states.col(i).
struct SampleSet {
  Mat states;       ///< n_x x N
  Mat controls;     ///< n_u x N
  Mat next_states;  ///< n_x x N

  [[nodiscard]] int count() const { return static_cast<int>(states.cols()); }
  [[nodiscard]] int n_x() const { return static_cast<int>(states.rows()); }
  [[nodiscard]] int n_u() const { return static_cast<int>(controls.rows()); }

  /// Throws std::invalid_argument on inconsistent shapes.
  void validate() const;
};

/// Binary persistence: 4-byte magic "CPDS", then little-endian u32 version,
/// u32 n_x, u32 n_u, u64 count, then count rows of (2 n_x + n_u) doubles
/// laid out as x, u, x_next. Byte-identical output for identical inputs.
void save_samples(const SampleSet& set, const std::string& path);

/// Throws std::runtime_error on missing file, bad magic, unsupported
/// version, or truncated payload.
[[nodiscard]] SampleSet load_samples(const std::string& path);

/// Human-readable mirror of the binary format: a header line naming every
/// column (x0.., u0.., y0..) and one CSV row per sample at full precision.
void export_csv(const SampleSet& set, const std::string& path);

/// Serializes a closed-loop run as JSON lines: first a header object
/// (seed, status, solves, final_state), then one object per step.
/// `include_times` controls whether wall-clock solve times are emitted;
/// leave it off when comparing logs for determinism. Non-finite margins are
/// encoded as the strings "nan" / "-inf" and restored on load.
[[nodiscard]] std::string run_log_to_jsonl(const mpc::RunLog& log,
                                           bool include_times);

void save_run_log(const mpc::RunLog& log, const std::string& path);

/// Throws std::runtime_error on missing file or malformed lines.
[[nodiscard]] mpc::RunLog load_run_log(const std::string& path);

}  // namespace cpsls::io
