#pragma once

namespace opental {

/// A batch-averaged loss value. `empty` is set when no sample qualified for
/// the average; `value` is then 0.
struct BatchLoss {
  double value = 0.0;
  bool empty = false;
};

}  // namespace opental
