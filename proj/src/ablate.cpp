#include "freqclick/ablate.h"

#include <algorithm>
#include <cstdio>
#include <ostream>

namespace freqclick {

const AblationRow& AblationTable::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw ContractError("table " + name + " has no row '" + label + "'");
}

double AblationTable::value(const std::string& label, const std::string& column) const {
  const auto it = std::find(columns.begin(), columns.end(), column);
  if (it == columns.end()) throw ContractError("table " + name + " has no column '" + column + "'");
  return row(label).values.at(static_cast<std::size_t>(it - columns.begin()));
}

void AblationTable::write_csv(std::ostream& os) const {
  os << "row";
  for (const auto& c : columns) os << ',' << c;
  os << '\n';
  char buf[32];
  for (const auto& r : rows) {
    os << r.label;
    for (double v : r.values) {
      std::snprintf(buf, sizeof buf, "%.4f", v);
      os << ',' << buf;
    }
    os << '\n';
  }
}

std::vector<std::string> eval_columns(const EvalConfig& cfg) {
  std::vector<std::string> cols;
  for (double t : cfg.iou_thresholds) cols.push_back("noc@" + std::to_string(static_cast<int>(t * 100 + 0.5)));
  for (double t : cfg.iou_thresholds) cols.push_back("fail@" + std::to_string(static_cast<int>(t * 100 + 0.5)));
  for (int k : {1, 5, 10, cfg.click_cap}) cols.push_back("miou@" + std::to_string(k));
  return cols;
}

AblationRow eval_row(const std::string& label, const EvalSummary& s, int cap) {
  AblationRow r{label, {}};
  for (double v : s.mean_noc) r.values.push_back(v);
  for (int f : s.failures) r.values.push_back(f);
  for (int k : {1, 5, 10, cap}) r.values.push_back(s.miou.at(static_cast<std::size_t>(std::min(k, cap) - 1)));
  return r;
}

namespace {

AblationTable run_policies(const std::string& name, const std::vector<Sample>& test, const Refiner& refiner,
                           const EvalConfig& base,
                           const std::vector<std::pair<std::string, SelectionPolicy>>& policies) {
  AblationTable t{name, eval_columns(base), {}};
  for (const auto& [label, policy] : policies) {
    EvalConfig cfg = base;
    cfg.policy = policy;
    cfg.policy.seed = base.seed;
    t.rows.push_back(eval_row(label, evaluate(test, refiner, cfg).summary(), cfg.click_cap));
  }
  return t;
}

SelectionPolicy with_kind(PolicyKind k) {
  SelectionPolicy p;
  p.kind = k;
  return p;
}

SelectionPolicy with_metrics(bool m, bool a, bool r) {
  SelectionPolicy p;
  p.score.metrics = MetricSet{m, a, r};
  return p;
}

}  // namespace

AblationTable ablate_sampling(const std::vector<Sample>& test, const Refiner& refiner, const EvalConfig& base) {
  return run_policies("sampling", test, refiner, base,
                      {{"Random", with_kind(PolicyKind::kRandom)},
                       {"Entropy", with_kind(PolicyKind::kEntropy)},
                       {"LeastConfidence", with_kind(PolicyKind::kLeastConfidence)},
                       {"AcSelect", with_kind(PolicyKind::kAcSelect)}});
}

AblationTable ablate_metrics(const std::vector<Sample>& test, const Refiner& refiner, const EvalConfig& base) {
  return run_policies("acselect-metrics", test, refiner, base,
                      {{"none", with_kind(PolicyKind::kRandom)},
                       {"+MPE", with_metrics(true, false, false)},
                       {"+MPE+APE", with_metrics(true, true, false)},
                       {"+all", with_metrics(true, true, true)}});
}

std::vector<std::array<bool, 3>> branch_rows() {
  return {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};
}

std::string branch_label(const std::array<bool, 3>& b) {
  std::string s;
  for (bool on : b) s += on ? '1' : '0';
  return s;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw ContractError("median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

AblationTable ablate_branches(const std::vector<Sample>& train_set, const std::vector<Sample>& val, NetConfig net,
                              TrainConfig tc, const std::vector<std::uint64_t>& seeds, const ProgressFn& progress,
                              const ModelFn& on_model) {
  if (seeds.empty()) throw ConfigError("dft-branches ablation needs at least one seed");
  AblationTable t{"dft-branches", {"median_iou"}, {}};
  for (auto s : seeds) t.columns.push_back("iou_seed" + std::to_string(s));
  for (const auto& b : branch_rows()) {
    net.branches = b;
    AblationRow row{branch_label(b), {0.0}};
    for (auto s : seeds) {
      if (progress) progress("branches " + row.label + " seed " + std::to_string(s));
      SegModel<float> model(net, s);
      tc.seed = s;
      train(model, train_set, tc);
      row.values.push_back(zero_click_iou(model, val));
      if (on_model) on_model(b, s, model);
    }
    row.values[0] = median({row.values.begin() + 1, row.values.end()});
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace freqclick
