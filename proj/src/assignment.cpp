#include "wildsort/assignment.hpp"
#include "wildsort/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>

namespace wildsort {

std::size_t HardAssignment::noise_count() const {
    return static_cast<std::size_t>(std::count(cluster_of.begin(), cluster_of.end(), kNoise));
}

std::vector<std::size_t> HardAssignment::cluster_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(std::max(k, 0)), 0);
    for (int c : cluster_of) {
        if (c != kNoise) ++sizes.at(static_cast<std::size_t>(c));
    }
    return sizes;
}

void HardAssignment::validate() const {
    if (k < 0) throw Error("assignment: negative cluster count");
    for (std::size_t i = 0; i < cluster_of.size(); ++i) {
        const int c = cluster_of[i];
        if (c != kNoise && (c < 0 || c >= k)) {
            throw Error("assignment: item " + std::to_string(i) + " has cluster " + std::to_string(c) +
                        " outside [0, " + std::to_string(k) + ")");
        }
    }
}

void to_json(nlohmann::json& j, const HardAssignment& a) {
    j = nlohmann::json{{"method", a.method}, {"k", a.k}, {"noise", a.noise_count()}, {"cluster_of", a.cluster_of}};
}

void from_json(const nlohmann::json& j, HardAssignment& a) {
    a.method = j.value("method", std::string{});
    a.k = j.at("k").get<int>();
    a.cluster_of = j.at("cluster_of").get<std::vector<int>>();
    a.validate();
}

} // namespace wildsort
