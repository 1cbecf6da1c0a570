#include "prevcc/data.hpp"

#include "prevcc/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace prevcc {

std::string_view to_string(Group g) {
  switch (g) {
    case Group::Control: return "control";
    case Group::Incident: return "incident";
    case Group::Prevalent: return "prevalent";
  }
  return "unknown";
}

Group parse_group(std::string_view label) {
  std::string s(label);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (s == "control") return Group::Control;
  if (s == "incident") return Group::Incident;
  if (s == "prevalent") return Group::Prevalent;
  input_error("unknown_group", fmt::format("'{}'", label));
}

Cohort::Cohort(std::vector<Subject> subjects) : subjects_(std::move(subjects)) {
  if (!subjects_.empty()) p_ = subjects_.front().x.size();
  for (std::size_t i = 0; i < subjects_.size(); ++i) {
    const auto& s = subjects_[i];
    if (static_cast<std::size_t>(s.x.size()) != p_)
      input_error("dimension_mismatch",
                  fmt::format("subject has {} covariates, expected {}", s.x.size(), p_), i);
    switch (s.group) {
      case Group::Control: ++n0_; break;
      case Group::Incident: ++n1_; break;
      case Group::Prevalent: ++n2_; break;
    }
  }
}

std::size_t Cohort::count(Group g) const {
  switch (g) {
    case Group::Control: return n0_;
    case Group::Incident: return n1_;
    case Group::Prevalent: return n2_;
  }
  return 0;
}

void validate_cohort(const Cohort& c, const ValidateOptions& opts) {
  std::size_t events = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Subject& s = c[i];
    if (static_cast<std::size_t>(s.x.size()) != c.p())
      input_error("dimension_mismatch", {}, i);
    if (!s.x.allFinite()) input_error("non_finite_covariate", {}, i);
    switch (s.group) {
      case Group::Control:
        if (s.a || s.y || s.delta) input_error("control_has_survival_data", {}, i);
        continue;
      case Group::Incident:
        if (s.a) input_error("incident_has_backward_time", {}, i);
        break;
      case Group::Prevalent:
        if (!s.a) input_error("prevalent_missing_backward_time", {}, i);
        if (!std::isfinite(*s.a) || *s.a < 0.0) input_error("negative_backward_time", {}, i);
        break;
    }
    if (!s.y || !s.delta) input_error("case_missing_followup", {}, i);
    if (!std::isfinite(*s.y) || *s.y < 0.0) input_error("negative_followup", {}, i);
    if (*s.delta != 0 && *s.delta != 1) input_error("invalid_delta", {}, i);
    if (*s.delta == 1 && *s.y <= 0.0) input_error("event_at_time_zero", {}, i);
    if (s.group == Group::Prevalent) {
      if (*s.a > *s.y) input_error("truncation_violated", "backward time exceeds observed time", i);
      if (*s.a == *s.y) {
        if (*s.delta == 1) input_error("truncation_violated", "event at the truncation time", i);
        input_error("zero_forward_followup", {}, i);
      }
    }
    events += static_cast<std::size_t>(*s.delta);
  }
  if (opts.require_events) {
    if (c.n1() + c.n2() == 0) input_error("no_cases");
    if (events == 0) numerical_error("no_events", "all cases are censored");
  }
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_number(std::string_view cell, std::size_t row,
                                   std::string_view column) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (ec != std::errc() || ptr != cell.data() + cell.size())
    input_error("non_numeric", fmt::format("column '{}' value '{}' at row {}", column, cell, row), row);
  return v;
}

}  // namespace

Cohort parse_cohort(std::string_view text, const CohortSchema& schema) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      auto pos = text.find('\n', start);
      auto line = text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!trim(line).empty()) lines.push_back(line);
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
  }
  if (lines.empty()) input_error("missing_header", "empty file");

  auto header = split(lines.front(), schema.delimiter);
  auto find_col = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) input_error("missing_column", fmt::format("'{}'", name));
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t gcol = find_col(schema.group);
  const std::size_t acol = find_col(schema.a);
  const std::size_t ycol = find_col(schema.y);
  const std::size_t dcol = find_col(schema.delta);
  std::vector<std::size_t> xcols;
  if (schema.covariates.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (j != gcol && j != acol && j != ycol && j != dcol) xcols.push_back(j);
  } else {
    for (const auto& name : schema.covariates) xcols.push_back(find_col(name));
  }

  std::vector<Subject> subjects;
  subjects.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    auto cells = split(lines[r], schema.delimiter);
    if (cells.size() != header.size())
      input_error("covariate_length_mismatch",
                  fmt::format("row {} has {} fields, header has {}", r, cells.size(), header.size()), r);
    Subject s;
    try {
      s.group = parse_group(cells[gcol]);
    } catch (const Error& e) {
      input_error("unknown_group", fmt::format("'{}' at row {}", cells[gcol], r), r);
    }
    s.a = parse_number(cells[acol], r, schema.a);
    s.y = parse_number(cells[ycol], r, schema.y);
    if (auto d = parse_number(cells[dcol], r, schema.delta)) {
      if (*d != 0.0 && *d != 1.0)
        input_error("invalid_delta", fmt::format("row {}", r), r);
      s.delta = static_cast<int>(*d);
    }
    s.x.resize(static_cast<Eigen::Index>(xcols.size()));
    for (std::size_t j = 0; j < xcols.size(); ++j) {
      auto v = parse_number(cells[xcols[j]], r, header[xcols[j]]);
      if (!v) input_error("missing_covariate", fmt::format("column '{}' at row {}", header[xcols[j]], r), r);
      s.x[static_cast<Eigen::Index>(j)] = *v;
    }
    subjects.push_back(std::move(s));
  }

  Cohort cohort(std::move(subjects));
  try {
    validate_cohort(cohort);
  } catch (const Error& e) {
    // Report positions as 1-based data rows, the way they appear in the file.
    const std::size_t row = e.index().value_or(0) + 1;
    input_error(e.code(), fmt::format("{} at row {}", e.code(), row), row);
  }
  return cohort;
}

Cohort load_cohort(const std::string& path, const CohortSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) input_error("io_error", fmt::format("cannot open '{}'", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) input_error("io_error", fmt::format("read failure on '{}'", path));
  return parse_cohort(ss.str(), schema);
}

std::string format_cohort(const Cohort& c, char delimiter) {
  std::string out;
  const char d = delimiter;
  out += fmt::format("group{}a{}y{}delta", d, d, d);
  for (std::size_t j = 0; j < c.p(); ++j) out += fmt::format("{}x{}", d, j + 1);
  out += '\n';
  auto opt = [](const std::optional<double>& v) {
    return v ? fmt::format("{:.17g}", *v) : std::string();
  };
  for (const auto& s : c.subjects()) {
    out += to_string(s.group);
    out += d;
    out += opt(s.a);
    out += d;
    out += opt(s.y);
    out += d;
    if (s.delta) out += std::to_string(*s.delta);
    for (Eigen::Index j = 0; j < s.x.size(); ++j) out += fmt::format("{}{:.17g}", d, s.x[j]);
    out += '\n';
  }
  return out;
}

void save_cohort(const Cohort& c, const std::string& path, char delimiter) {
  std::ofstream out(path, std::ios::binary);
  if (!out) input_error("io_error", fmt::format("cannot write '{}'", path));
  out << format_cohort(c, delimiter);
  if (!out) input_error("io_error", fmt::format("write failure on '{}'", path));
}

std::size_t CaseData::n_prevalent() const {
  return static_cast<std::size_t>(std::count(prevalent.begin(), prevalent.end(), true));
}

std::size_t CaseData::n_events() const {
  return static_cast<std::size_t>(std::count(delta.begin(), delta.end(), 1));
}

CaseData case_data(const Cohort& c) {
  CaseData cd;
  const std::size_t n = c.n1() + c.n2();
  const auto p = static_cast<Eigen::Index>(c.p());
  cd.x.resize(static_cast<Eigen::Index>(n), p);
  cd.entry.resize(static_cast<Eigen::Index>(n));
  cd.exit.resize(static_cast<Eigen::Index>(n));
  cd.delta.reserve(n);
  cd.prevalent.reserve(n);
  cd.cohort_index.reserve(n);
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Subject& s = c[i];
    if (!s.is_case()) continue;
    cd.x.row(r) = s.x.transpose();
    cd.entry[r] = s.group == Group::Prevalent ? s.a.value_or(0.0) : 0.0;
    cd.exit[r] = s.y.value_or(0.0);
    cd.delta.push_back(s.delta.value_or(0));
    cd.prevalent.push_back(s.group == Group::Prevalent);
    cd.cohort_index.push_back(i);
    ++r;
  }
  return cd;
}

}  // namespace prevcc
