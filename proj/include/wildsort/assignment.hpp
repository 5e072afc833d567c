#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstddef>
#include <string>
#include <vector>

namespace wildsort {

/// Cluster index used for DBSCAN noise.
inline constexpr int kNoise = -1;

/// Hard cluster membership, one entry per item. Non-noise entries lie in [0, k).
struct HardAssignment {
    std::vector<int> cluster_of;
    int k = 0;
    /// "gmm" or "dbscan"; informational only.
    std::string method;

    std::size_t size() const { return cluster_of.size(); }
    std::size_t noise_count() const;
    /// Members per cluster (noise excluded).
    std::vector<std::size_t> cluster_sizes() const;
    /// Throws Error if any entry is outside [0, k) and not noise.
    void validate() const;

    bool operator==(const HardAssignment&) const = default;
};

void to_json(nlohmann::json& j, const HardAssignment& a);
void from_json(const nlohmann::json& j, HardAssignment& a);

} // namespace wildsort
