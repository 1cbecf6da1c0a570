#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prevcc {

enum class Group { Control, Incident, Prevalent };

std::string_view to_string(Group g);
Group parse_group(std::string_view label);  // case-insensitive

/// One study record. Controls carry covariates only; incident cases add
/// follow-up (y, delta); prevalent cases additionally carry the backward
/// time a, measured from diagnosis like y.
struct Subject {
  Group group = Group::Control;
  Eigen::VectorXd x;
  std::optional<double> a;
  std::optional<double> y;
  std::optional<int> delta;

  bool is_case() const { return group != Group::Control; }
};

/// Immutable, dimension-checked collection of subjects.
class Cohort {
 public:
  Cohort() = default;
  explicit Cohort(std::vector<Subject> subjects);

  const std::vector<Subject>& subjects() const { return subjects_; }
  const Subject& operator[](std::size_t i) const { return subjects_[i]; }
  std::size_t size() const { return subjects_.size(); }
  std::size_t n0() const { return n0_; }
  std::size_t n1() const { return n1_; }
  std::size_t n2() const { return n2_; }
  std::size_t p() const { return p_; }
  std::size_t count(Group g) const;

 private:
  std::vector<Subject> subjects_;
  std::size_t n0_ = 0, n1_ = 0, n2_ = 0, p_ = 0;
};

/// Column-name map for delimiter-separated cohort files. An empty
/// `covariates` list selects every column that is not one of the four
/// named columns, in file order.
struct CohortSchema {
  std::string group = "group";
  std::string a = "a";
  std::string y = "y";
  std::string delta = "delta";
  std::vector<std::string> covariates;
  char delimiter = ',';
};

struct ValidateOptions {
  // Also require at least one case and at least one observed event, the
  // preconditions of every survival fit.
  bool require_events = false;
};

/// Throws prevcc::Error with a distinct code per violated invariant; the
/// error index is the offending subject position.
void validate_cohort(const Cohort& c, const ValidateOptions& opts = {});

Cohort load_cohort(const std::string& path, const CohortSchema& schema = {});
Cohort parse_cohort(std::string_view text, const CohortSchema& schema = {});

/// Writes `group,a,y,delta,x1..xp` with 17 significant digits.
void save_cohort(const Cohort& c, const std::string& path, char delimiter = ',');
std::string format_cohort(const Cohort& c, char delimiter = ',');

/// Columnar view of the cases used by the survival estimators. Incident
/// cases get entry time 0.
struct CaseData {
  Eigen::MatrixXd x;              // n x p
  Eigen::VectorXd entry;          // backward time, 0 for incident
  Eigen::VectorXd exit;           // observed time y
  std::vector<int> delta;
  std::vector<bool> prevalent;
  std::vector<std::size_t> cohort_index;

  std::size_t size() const { return exit.size(); }
  std::size_t p() const { return x.cols(); }
  std::size_t n_prevalent() const;
  std::size_t n_events() const;
};

CaseData case_data(const Cohort& c);

}  // namespace prevcc
