#include "cpsls/io.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace cpsls::io {
namespace {

constexpr char kMagic[4] = {'C', 'P', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class Reader {
 public:
  Reader(const std::string& data, const std::string& path)
      : data_(data), path_(path) {}

  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  char raw() { return static_cast<char>(byte()); }
  [[nodiscard]] bool exhausted() const { return pos_ == data_.size(); }

 private:
  std::uint8_t byte() {
    if (pos_ >= data_.size())
      throw std::runtime_error("dataset '" + path_ + "': truncated file");
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  const std::string& data_;
  const std::string path_;
  std::size_t pos_{0};
};

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Round-trip-exact double encoding for text formats.
std::string full_precision(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

nlohmann::json encode_margin(double m) {
  if (std::isnan(m)) return "nan";
  if (std::isinf(m)) return m > 0 ? "inf" : "-inf";
  return m;
}

double decode_margin(const nlohmann::json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw std::runtime_error("run log: unknown margin token '" + s + "'");
  }
  return j.get<double>();
}

nlohmann::json encode_vec(const Vec& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Vec decode_vec(const nlohmann::json& arr) {
  Vec v(arr.size());
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  return v;
}

}  // namespace

void SampleSet::validate() const {
  if (controls.cols() != states.cols() || next_states.cols() != states.cols())
    throw std::invalid_argument("SampleSet: column counts differ across blocks");
  if (next_states.rows() != states.rows())
    throw std::invalid_argument("SampleSet: next_states row count != states");
}

void save_samples(const SampleSet& set, const std::string& path) {
  set.validate();
  std::string bytes;
  bytes.reserve(24 + static_cast<std::size_t>(set.count()) *
                         (2 * set.n_x() + set.n_u()) * 8);
  bytes.append(kMagic, 4);
  put_u32(bytes, kVersion);
  put_u32(bytes, static_cast<std::uint32_t>(set.n_x()));
  put_u32(bytes, static_cast<std::uint32_t>(set.n_u()));
  put_u64(bytes, static_cast<std::uint64_t>(set.count()));
  for (int i = 0; i < set.count(); ++i) {
    for (int r = 0; r < set.n_x(); ++r) put_f64(bytes, set.states(r, i));
    for (int r = 0; r < set.n_u(); ++r) put_f64(bytes, set.controls(r, i));
    for (int r = 0; r < set.n_x(); ++r) put_f64(bytes, set.next_states(r, i));
  }
  write_file(path, bytes);
}

SampleSet load_samples(const std::string& path) {
  const std::string bytes = read_file(path);
  Reader rd(bytes, path);
  for (char m : kMagic) {
    if (rd.raw() != m)
      throw std::runtime_error("dataset '" + path + "': bad magic");
  }
  const std::uint32_t version = rd.u32();
  if (version != kVersion)
    throw std::runtime_error("dataset '" + path + "': unsupported version " +
                             std::to_string(version));
  const auto n_x = static_cast<int>(rd.u32());
  const auto n_u = static_cast<int>(rd.u32());
  const auto count = static_cast<std::int64_t>(rd.u64());
  if (n_x <= 0 || n_u < 0 || count < 0)
    throw std::runtime_error("dataset '" + path + "': bad header dimensions");
  SampleSet set;
  set.states.resize(n_x, count);
  set.controls.resize(n_u, count);
  set.next_states.resize(n_x, count);
  for (std::int64_t i = 0; i < count; ++i) {
    for (int r = 0; r < n_x; ++r) set.states(r, i) = rd.f64();
    for (int r = 0; r < n_u; ++r) set.controls(r, i) = rd.f64();
    for (int r = 0; r < n_x; ++r) set.next_states(r, i) = rd.f64();
  }
  if (!rd.exhausted())
    throw std::runtime_error("dataset '" + path + "': trailing bytes");
  return set;
}

void export_csv(const SampleSet& set, const std::string& path) {
  set.validate();
  std::ostringstream out;
  for (int r = 0; r < set.n_x(); ++r) out << (r ? "," : "") << "x" << r;
  for (int r = 0; r < set.n_u(); ++r) out << ",u" << r;
  for (int r = 0; r < set.n_x(); ++r) out << ",y" << r;
  out << "\n";
  for (int i = 0; i < set.count(); ++i) {
    for (int r = 0; r < set.n_x(); ++r)
      out << (r ? "," : "") << full_precision(set.states(r, i));
    for (int r = 0; r < set.n_u(); ++r) out << "," << full_precision(set.controls(r, i));
    for (int r = 0; r < set.n_x(); ++r)
      out << "," << full_precision(set.next_states(r, i));
    out << "\n";
  }
  write_file(path, out.str());
}

std::string run_log_to_jsonl(const mpc::RunLog& log, bool include_times) {
  std::ostringstream out;
  nlohmann::json header;
  header["kind"] = "run_log";
  header["seed"] = log.seed;
  header["status"] = log.status == mpc::RunStatus::ReachedGoal ? "reached_goal"
                                                               : "max_steps";
  header["solves"] = log.solves;
  header["final_state"] = encode_vec(log.final_state);
  header["steps"] = log.steps.size();
  out << header.dump() << "\n";
  for (const auto& rec : log.steps) {
    nlohmann::json j;
    j["x"] = encode_vec(rec.x);
    j["u"] = encode_vec(rec.u);
    if (include_times) j["solve_seconds"] = rec.solve_seconds;
    j["prediction_error"] = rec.prediction_error;
    j["margin"] = encode_margin(rec.margin);
    j["min_obstacle_distance"] = encode_margin(rec.min_obstacle_distance);
    j["tube_log_volume"] = rec.tube_log_volume;
    j["quantile"] = encode_margin(rec.quantile);
    j["degraded"] = rec.degraded;
    out << j.dump() << "\n";
  }
  return out.str();
}

void save_run_log(const mpc::RunLog& log, const std::string& path) {
  write_file(path, run_log_to_jsonl(log, true));
}

mpc::RunLog load_run_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("run log '" + path + "': empty file");
  mpc::RunLog log;
  try {
    const nlohmann::json header = nlohmann::json::parse(line);
    if (header.at("kind").get<std::string>() != "run_log")
      throw std::runtime_error("not a run log");
    log.seed = header.at("seed").get<std::uint64_t>();
    log.status = header.at("status").get<std::string>() == "reached_goal"
                     ? mpc::RunStatus::ReachedGoal
                     : mpc::RunStatus::MaxSteps;
    log.solves = header.at("solves").get<int>();
    log.final_state = decode_vec(header.at("final_state"));
    const auto expected = header.at("steps").get<std::size_t>();
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line);
      mpc::StepRecord rec;
      rec.x = decode_vec(j.at("x"));
      rec.u = decode_vec(j.at("u"));
      rec.solve_seconds = j.contains("solve_seconds")
                              ? j.at("solve_seconds").get<double>()
                              : 0.0;
      rec.prediction_error = j.at("prediction_error").get<double>();
      rec.margin = decode_margin(j.at("margin"));
      rec.min_obstacle_distance = decode_margin(j.at("min_obstacle_distance"));
      rec.tube_log_volume = j.at("tube_log_volume").get<double>();
      rec.quantile = decode_margin(j.at("quantile"));
      rec.degraded = j.at("degraded").get<bool>();
      log.steps.push_back(std::move(rec));
    }
    if (log.steps.size() != expected)
      throw std::runtime_error("step count mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("run log '" + path + "': " + e.what());
  } catch (const std::runtime_error& e) {
    throw std::runtime_error("run log '" + path + "': " + e.what());
  }
  return log;
}

}  // namespace cpsls::io
