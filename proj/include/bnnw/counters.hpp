#pragma once

#include <cstdint>

namespace bnnw::counters {

// Process-wide tallies of expensive fits; used to audit that resampling reuses fitted nuisances.
std::uint64_t net_trainings();
std::uint64_t mu_fits();
std::uint64_t dmu_fits();

void record_net_training();
void record_mu_fit();
void record_dmu_fit();

}  // namespace bnnw::counters
