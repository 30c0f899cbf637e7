#pragma once

#include <cstdint>

namespace gfl {

// Multiply-accumulate counter. One (a x b) * (b x c) matrix product adds
// exactly a*b*c. Only forward-pass matmuls report here; backward kernels and
// non-matmul ops (softmax, layer norm, relu) are excluded from the totals by
// convention, matching the analytic cost model.
struct MacCounter {
    std::uint64_t macs = 0;
    bool enabled = true;

    void add(std::uint64_t n) {
        if (enabled) macs += n;
    }
    void reset() { macs = 0; }
};

inline MacCounter*& active_mac_counter() {
    thread_local MacCounter* counter = nullptr;
    return counter;
}

inline void record_macs(std::uint64_t n) {
    MacCounter* c = active_mac_counter();
    if (c) c->add(n);
}

// Installs a counter for the current scope.
class MacScope {
public:
    explicit MacScope(MacCounter& c) : prev_(active_mac_counter()) { active_mac_counter() = &c; }
    ~MacScope() { active_mac_counter() = prev_; }
    MacScope(const MacScope&) = delete;
    MacScope& operator=(const MacScope&) = delete;

private:
    MacCounter* prev_;
};

}  // namespace gfl
