#include "bnnw/counters.hpp"

#include <atomic>

namespace bnnw::counters {
namespace {
std::atomic<std::uint64_t> g_net{0}, g_mu{0}, g_dmu{0};
}

std::uint64_t net_trainings() { return g_net.load(); }
std::uint64_t mu_fits() { return g_mu.load(); }
std::uint64_t dmu_fits() { return g_dmu.load(); }

void record_net_training() { g_net.fetch_add(1); }
void record_mu_fit() { g_mu.fetch_add(1); }
void record_dmu_fit() { g_dmu.fetch_add(1); }

}  // namespace bnnw::counters
