#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vbmis/population.hpp"
#include "vbmis/vb.hpp"

namespace vbmis::cli {

class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Plain-text key-value record. The first line is `record = <kind> v<version>`;
/// keys keep insertion order. Vectors are written as `d v_1 .. v_d`, matrices
/// as `r c` followed by the entries in row-major order, numbers with %.17g.
class Record {
 public:
  static constexpr int kVersion = 1;

  explicit Record(std::string kind = "") : kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value);
  void set(const std::string& key, const Vec& value);
  void set(const std::string& key, const Mat& value);
  /// Timestamp line, ignored when records are compared.
  void stamp_created();

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  Vec get_vec(const std::string& key) const;
  Mat get_mat(const std::string& key) const;

  void write(std::ostream& out) const;
  static Record read(std::istream& in);
  void save(const std::string& path) const;
  static Record load(const std::string& path);

 private:
  std::string kind_;
  std::vector<std::string> order_;
  std::map<std::string, std::string> values_;
};

Record population_record(const PopulationSummary& s);
PopulationSummary population_from_record(const Record& r);

Record fit_record(const MeanFieldGaussian& q, const FitReport& report);
MeanFieldGaussian fit_from_record(const Record& r);

}  // namespace vbmis::cli
