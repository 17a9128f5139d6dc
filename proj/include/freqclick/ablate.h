#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "freqclick/click_loop.h"
#include "freqclick/train.h"

namespace freqclick {

struct AblationRow {
  std::string label;
  std::vector<double> values;  // one per table column
};

struct AblationTable {
  std::string name;
  std::vector<std::string> columns;
  std::vector<AblationRow> rows;

  const AblationRow& row(const std::string& label) const;  // ContractError if absent
  double value(const std::string& label, const std::string& column) const;
  // CSV with header: row,<columns...>
  void write_csv(std::ostream& os) const;
};

// Columns shared by the click-loop ablations: noc@t and fail@t per
// threshold, then miou@1, miou@5, miou@10 and miou@cap.
std::vector<std::string> eval_columns(const EvalConfig& cfg);
AblationRow eval_row(const std::string& label, const EvalSummary& s, int cap);

// Rows Random, Entropy, LeastConfidence, AcSelect.
AblationTable ablate_sampling(const std::vector<Sample>& test, const Refiner& refiner, const EvalConfig& base);

// Rows none, +MPE, +MPE+APE, +all. "none" scores no metric at all, which
// leaves the choice to chance: it runs the Random policy under base.seed.
AblationTable ablate_metrics(const std::vector<Sample>& test, const Refiner& refiner, const EvalConfig& base);

// The branch pattern of each Table 3 row in order: 000, 100, 110, 111.
std::vector<std::array<bool, 3>> branch_rows();
std::string branch_label(const std::array<bool, 3>& b);

using ProgressFn = std::function<void(const std::string& what)>;
// Sees each trained model before it is discarded.
using ModelFn = std::function<void(const std::array<bool, 3>& branches, std::uint64_t seed, SegModel<float>& model)>;

// Trains one model per (row, seed) with equal budget and reports the median
// and per-seed zero-click IoU on `val`. Columns: median_iou, iou_seed<s>...
AblationTable ablate_branches(const std::vector<Sample>& train_set, const std::vector<Sample>& val, NetConfig net,
                              TrainConfig tc, const std::vector<std::uint64_t>& seeds,
                              const ProgressFn& progress = nullptr, const ModelFn& on_model = nullptr);

double median(std::vector<double> xs);

}  // namespace freqclick
