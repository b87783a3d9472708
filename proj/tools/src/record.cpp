#include "record.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <limits>
#include <sstream>

namespace vbmis::cli {

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> numbers(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  std::vector<double> out;
  for (std::string w; in >> w;) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(w, &pos));
      if (pos != w.size()) throw std::invalid_argument(w);
    } catch (const std::exception&) {
      if (w == "nan" || w == "-nan") {
        out.push_back(std::numeric_limits<double>::quiet_NaN());
      } else if (w == "inf") {
        out.push_back(std::numeric_limits<double>::infinity());
      } else if (w == "-inf") {
        out.push_back(-std::numeric_limits<double>::infinity());
      } else {
        throw RecordError("record field '" + key + "': bad number '" + w + "'");
      }
    }
  }
  return out;
}

}  // namespace

void Record::set(const std::string& key, const std::string& value) {
  if (key.empty() || key.find('=') != std::string::npos || value.find('\n') != std::string::npos) {
    throw RecordError("record: invalid key or value for '" + key + "'");
  }
  if (!values_.count(key)) order_.push_back(key);
  values_[key] = value;
}

void Record::set(const std::string& key, double value) { set(key, num(value)); }

void Record::set(const std::string& key, const Vec& value) {
  std::string s = std::to_string(value.size());
  for (Eigen::Index i = 0; i < value.size(); ++i) s += " " + num(value[i]);
  set(key, s);
}

void Record::set(const std::string& key, const Mat& value) {
  std::string s = std::to_string(value.rows()) + " " + std::to_string(value.cols());
  for (Eigen::Index i = 0; i < value.rows(); ++i) {
    for (Eigen::Index j = 0; j < value.cols(); ++j) s += " " + num(value(i, j));
  }
  set(key, s);
}

void Record::stamp_created() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  set("created", std::string(buf));
}

const std::string& Record::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw RecordError(kind_ + " record: missing field '" + key + "'");
  return it->second;
}

double Record::get_double(const std::string& key) const {
  const auto v = numbers(key, get(key));
  if (v.size() != 1) throw RecordError(kind_ + " record: field '" + key + "' is not a scalar");
  return v[0];
}

Vec Record::get_vec(const std::string& key) const {
  const auto v = numbers(key, get(key));
  if (v.empty() || v[0] != static_cast<double>(static_cast<std::size_t>(v[0])) ||
      v.size() != static_cast<std::size_t>(v[0]) + 1) {
    throw RecordError(kind_ + " record: field '" + key + "' is not a vector");
  }
  Vec out(static_cast<Eigen::Index>(v[0]));
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = v[static_cast<std::size_t>(i) + 1];
  return out;
}

Mat Record::get_mat(const std::string& key) const {
  const auto v = numbers(key, get(key));
  if (v.size() < 2 || v.size() != static_cast<std::size_t>(v[0] * v[1]) + 2) {
    throw RecordError(kind_ + " record: field '" + key + "' is not a matrix");
  }
  const auto r = static_cast<Eigen::Index>(v[0]), c = static_cast<Eigen::Index>(v[1]);
  Mat out(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) out(i, j) = v[static_cast<std::size_t>(2 + i * c + j)];
  }
  return out;
}

void Record::write(std::ostream& out) const {
  out << "record = " << kind_ << " v" << kVersion << '\n';
  for (const auto& k : order_) out << k << " = " << values_.at(k) << '\n';
}

Record Record::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("record = ", 0) != 0) throw RecordError("record: missing header line");
  const std::string head = line.substr(9);
  const auto sp = head.rfind(" v");
  if (sp == std::string::npos) throw RecordError("record: malformed header '" + line + "'");
  if (head.substr(sp + 2) != std::to_string(kVersion)) {
    throw RecordError("record: unsupported version '" + head.substr(sp + 2) + "'");
  }
  Record r(head.substr(0, sp));
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw RecordError("record: malformed line '" + line + "'");
    r.set(line.substr(0, eq), line.substr(eq + 3));
  }
  return r;
}

void Record::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw RecordError("cannot write '" + path + "'");
  write(out);
}

Record Record::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw RecordError("cannot read '" + path + "'");
  return read(in);
}

Record population_record(const PopulationSummary& s) {
  Record r("population");
  r.set("dim", static_cast<double>(s.dim()));
  r.set("theta_star", s.theta_star);
  r.set("theta_star_se", s.theta_star_se);
  r.set("V", s.V);
  r.set("V_se", s.V_se);
  r.set("S", s.S);
  r.set("S_se", s.S_se);
  r.set("gap_se", s.gap_se);
  r.set("sandwich", s.sandwich);
  r.set("kl_at_star", s.kl_at_star);
  r.set("kl_exact", s.kl_exact ? "true" : "false");
  r.set("multimodal", s.multimodal ? "true" : "false");
  r.set("mc_draws", std::to_string(s.mc_draws));
  r.set("seed", std::to_string(s.seed));
  return r;
}

PopulationSummary population_from_record(const Record& r) {
  if (r.kind() != "population") throw RecordError("expected a population record, got '" + r.kind() + "'");
  PopulationSummary s;
  s.theta_star = r.get_vec("theta_star");
  s.theta_star_se = r.get_vec("theta_star_se");
  s.V = r.get_mat("V");
  s.V_se = r.get_mat("V_se");
  s.S = r.get_mat("S");
  s.S_se = r.get_mat("S_se");
  s.gap_se = r.get_mat("gap_se");
  s.sandwich = r.get_mat("sandwich");
  s.kl_at_star = r.get_double("kl_at_star");
  s.kl_exact = r.get("kl_exact") == "true";
  s.multimodal = r.get("multimodal") == "true";
  s.mc_draws = std::stoull(r.get("mc_draws"));
  s.seed = std::stoull(r.get("seed"));
  const auto d = s.theta_star.size();
  if (s.V.rows() != d || s.V.cols() != d || s.S.rows() != d || s.S.cols() != d) {
    throw RecordError("population record: theta_star, V and S dimensions disagree");
  }
  return s;
}

Record fit_record(const MeanFieldGaussian& q, const FitReport& report) {
  Record r("fit");
  r.set("dim", static_cast<double>(q.dim()));
  r.set("mu", q.mu);
  r.set("log_sigma", q.log_sigma);
  r.set("final_elbo", report.final_elbo);
  r.set("final_elbo_se", report.final_elbo_se);
  r.set("steps", std::to_string(report.steps));
  r.set("converged", report.converged ? "true" : "false");
  r.set("rejected_samples", std::to_string(report.rejected_samples));
  return r;
}

MeanFieldGaussian fit_from_record(const Record& r) {
  if (r.kind() != "fit") throw RecordError("expected a fit record, got '" + r.kind() + "'");
  const Vec mu = r.get_vec("mu"), ls = r.get_vec("log_sigma");
  if (mu.size() != ls.size()) throw RecordError("fit record: mu and log_sigma lengths differ");
  return MeanFieldGaussian(mu, ls);
}

}  // namespace vbmis::cli
