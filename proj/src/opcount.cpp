#include "pkkd/opcount.hpp"

#include <cstdio>

namespace pkkd {

namespace {

void add_layer(OpCountReport& r, std::string name, std::uint64_t mul, std::uint64_t add) {
  r.per_layer.push_back({std::move(name), mul, add});
  r.mul += mul;
  r.add += add;
}

}  // namespace

OpCountReport count_ops(const ModelPlan& plan, CountMode mode, CountOptions opts) {
  OpCountReport r;
  for (const PlanItem& it : plan.items) {
    if (it.op == PlanOp::Conv) {
      std::uint64_t macs = static_cast<std::uint64_t>(it.out_shape.h) * it.out_shape.w *
                           it.geom.kernel * it.geom.kernel * it.c_in * it.c_out;
      bool adder = mode == CountMode::Ann && it.adder_in_student;
      if (adder)
        add_layer(r, it.name + " (adder)", 0, 2 * macs);
      else
        add_layer(r, it.name, macs, macs);
    } else if (it.op == PlanOp::Linear) {
      if (!opts.include_classifier) continue;
      std::uint64_t macs = static_cast<std::uint64_t>(it.in_units) * it.out_units;
      add_layer(r, it.name, macs, macs);
    } else if (it.op == PlanOp::ResidualAdd && it.has_projection) {
      if (!opts.include_shortcuts) continue;
      std::uint64_t macs = static_cast<std::uint64_t>(it.out_shape.h) * it.out_shape.w *
                           it.proj_c_in * it.proj_c_out;
      // projections adder-ize with the interior in the student
      if (mode == CountMode::Ann)
        add_layer(r, it.name + ".shortcut (adder)", 0, 2 * macs);
      else
        add_layer(r, it.name + ".shortcut", macs, macs);
    }
  }
  return r;
}

OpCountReport count_ops(const ArchSpec& spec, CountMode mode, CountOptions opts) {
  return count_ops(build_plan(spec), mode, opts);
}

std::string format_count(std::uint64_t ops) {
  char buf[32];
  if (ops >= 1000000000ULL)
    std::snprintf(buf, sizeof(buf), "%.2fG", static_cast<double>(ops) / 1e9);
  else if (ops >= 1000000ULL)
    std::snprintf(buf, sizeof(buf), "%.2fM", static_cast<double>(ops) / 1e6);
  else
    std::snprintf(buf, sizeof(buf), "%llu", static_cast<unsigned long long>(ops));
  return buf;
}

}  // namespace pkkd
