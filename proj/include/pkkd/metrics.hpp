#pragma once

#include <string>
#include <vector>

#include "pkkd/tensor.hpp"

namespace pkkd {

/// One accuracy-curve row. Train accuracies are running means over the
/// epoch's batches; test accuracies come from a full eval pass.
struct MetricsRow {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0;
  double loss_ce_teacher = 0;
  double loss_mid = 0;
  double loss_blend = 0;
  double loss_total = 0;
  double teacher_train_acc = 0;
  double teacher_test_acc = 0;
  double student_train_acc = 0;
  double student_test_acc = 0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,step,lr,loss_ce_teacher,loss_mid,loss_blend,loss_total,"
    "teacher_train_acc,teacher_test_acc,student_train_acc,student_test_acc";

std::string format_metrics_row(const MetricsRow& row);
MetricsRow parse_metrics_row(const std::string& line);

std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> metrics_from_csv(const std::string& csv);

}  // namespace pkkd
