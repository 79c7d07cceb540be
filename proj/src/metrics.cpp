#include "pkkd/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <sstream>

namespace pkkd {

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

std::string format_metrics_row(const MetricsRow& r) {
  std::ostringstream os;
  os << r.epoch << ',' << r.step << ',' << fmt(r.lr) << ',' << fmt(r.loss_ce_teacher) << ','
     << fmt(r.loss_mid) << ',' << fmt(r.loss_blend) << ',' << fmt(r.loss_total) << ','
     << fmt(r.teacher_train_acc) << ',' << fmt(r.teacher_test_acc) << ','
     << fmt(r.student_train_acc) << ',' << fmt(r.student_test_acc);
  return os.str();
}

MetricsRow parse_metrics_row(const std::string& line) {
  MetricsRow r;
  double lr, ce, mid, blend, total, tta, tte, sta, ste;
  unsigned long long epoch, step;
  int n = std::sscanf(line.c_str(), "%llu,%llu,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &epoch,
                      &step, &lr, &ce, &mid, &blend, &total, &tta, &tte, &sta, &ste);
  if (n != 11) throw TensorError("metrics row has " + std::to_string(n) + " of 11 fields: " + line);
  r.epoch = epoch;
  r.step = step;
  r.lr = lr;
  r.loss_ce_teacher = ce;
  r.loss_mid = mid;
  r.loss_blend = blend;
  r.loss_total = total;
  r.teacher_train_acc = tta;
  r.teacher_test_acc = tte;
  r.student_train_acc = sta;
  r.student_test_acc = ste;
  return r;
}

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = kMetricsHeader;
  out += '\n';
  for (const MetricsRow& r : rows) {
    out += format_metrics_row(r);
    out += '\n';
  }
  return out;
}

std::vector<MetricsRow> metrics_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader)
    throw TensorError("metrics CSV header mismatch: " + line);
  std::vector<MetricsRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    rows.push_back(parse_metrics_row(line));
  }
  return rows;
}

}  // namespace pkkd
