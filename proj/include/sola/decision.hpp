#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <utility>

namespace sola {

/// Routing outcome for one forward pass. Adapted iff the nearest stored key
/// is strictly closer than the activation threshold.
struct Decision {
    enum class Kind { BaseOnly, Adapted };

    Kind kind = Kind::BaseOnly;
    std::optional<int> lora_id;
    double distance = std::numeric_limits<double>::infinity();
    std::optional<std::pair<int, int>> matched_entry;  // (edit_id, instance_id)

    bool adapted() const { return kind == Kind::Adapted; }

    bool operator==(const Decision& o) const = default;
};

}  // namespace sola
