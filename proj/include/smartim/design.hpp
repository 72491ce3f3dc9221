#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "smartim/errors.hpp"

namespace smartim {

enum class DesignKind { smart1, smart2 };

inline const char* to_string(DesignKind k) {
  return k == DesignKind::smart1 ? "smart1" : "smart2";
}

/// One embedded treatment strategy: first-line arm, maintenance arm for
/// responders, salvage arm for non-responders (0 when the design has none).
struct DtrLabel {
  int first = 1;
  int maintenance = 1;
  int salvage = 0;

  std::string name() const {
    std::string s = "A" + std::to_string(first) + "B" + std::to_string(maintenance);
    if (salvage > 0) s += "C" + std::to_string(salvage);
    return s;
  }

  friend bool operator==(const DtrLabel&, const DtrLabel&) = default;
};

/// Randomization layout of a two-stage trial. smart1 re-randomizes both
/// responders and non-responders; smart2 re-randomizes responders only.
struct SmartDesign {
  DesignKind kind = DesignKind::smart1;
  std::array<double, 2> first_probs{0.5, 0.5};         // P(A1), P(A2)
  std::array<double, 2> responder_probs{0.5, 0.5};     // P(B1), P(B2)
  std::array<double, 2> nonresponder_probs{0.5, 0.5};  // P(C1), P(C2), smart1 only
  DtrLabel reference{1, 1, 1};

  static SmartDesign smart1_balanced() {
    SmartDesign d;
    d.kind = DesignKind::smart1;
    d.reference = {1, 1, 1};
    return d;
  }

  static SmartDesign smart2_balanced() {
    SmartDesign d;
    d.kind = DesignKind::smart2;
    d.nonresponder_probs = {1.0, 0.0};  // unused
    d.reference = {1, 1, 0};
    return d;
  }

  int n_dtrs() const { return kind == DesignKind::smart1 ? 8 : 4; }
  int n_contrasts() const { return n_dtrs() - 1; }

  /// Catalog of embedded strategies in a fixed lexicographic order.
  std::vector<DtrLabel> dtrs() const {
    std::vector<DtrLabel> out;
    if (kind == DesignKind::smart1) {
      for (int j = 1; j <= 2; ++j)
        for (int k = 1; k <= 2; ++k)
          for (int l = 1; l <= 2; ++l) out.push_back({j, k, l});
    } else {
      for (int j = 1; j <= 2; ++j)
        for (int k = 1; k <= 2; ++k) out.push_back({j, k, 0});
    }
    return out;
  }

  int reference_index() const {
    const auto all = dtrs();
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i] == reference) return static_cast<int>(i);
    throw ArgumentError("design reference " + reference.name() +
                        " is not an embedded strategy of this design");
  }

  /// All non-reference strategies, catalog order.
  std::vector<DtrLabel> contrasts() const {
    std::vector<DtrLabel> out;
    for (const auto& d : dtrs())
      if (!(d == reference)) out.push_back(d);
    return out;
  }

  // Probabilities may sit at 1 (degenerate single-path designs used for
  // reductions to classical two-group statistics); arms with probability 0
  // must be empty in the data, which record validation enforces.
  void validate() const {
    auto check_pair = [](const std::array<double, 2>& pr, const char* what) {
      if (!(pr[0] >= 0.0 && pr[0] <= 1.0) || !(pr[1] >= 0.0 && pr[1] <= 1.0))
        throw ValidationError(std::string(what) + " probabilities outside [0,1]");
      if (std::abs(pr[0] + pr[1] - 1.0) > 1e-12)
        throw ValidationError(std::string(what) + " probabilities do not sum to 1");
      if (pr[0] <= 0.0 && pr[1] <= 0.0)
        throw ValidationError(std::string(what) + " probabilities are both 0");
    };
    check_pair(first_probs, "first-stage");
    check_pair(responder_probs, "responder");
    if (kind == DesignKind::smart1) check_pair(nonresponder_probs, "non-responder");
    if (kind == DesignKind::smart1 && reference.salvage == 0)
      throw ValidationError("smart1 reference must name a salvage arm");
    if (kind == DesignKind::smart2 && reference.salvage != 0)
      throw ValidationError("smart2 reference cannot name a salvage arm");
    reference_index();  // throws if the reference is not in the catalog
  }
};

}  // namespace smartim
