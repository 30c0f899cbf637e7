#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "gfl/blocks.hpp"
#include "gfl/costmodel.hpp"

// Wall-clock harness. Timing runs are single-threaded and sequential; every
// cell reruns the identical input, so all non-timing outputs are reproducible
// bit for bit under a fixed seed. Memory columns always carry the analytic
// estimate; wall-clock noise never leaks into them.

namespace gfl {

enum class BenchMode { fwd, fwd_bwd };

inline const char* bench_mode_name(BenchMode m) { return m == BenchMode::fwd ? "fwd" : "fwd_bwd"; }

inline BenchMode bench_mode_from_name(const std::string& s) {
    if (s == "fwd") return BenchMode::fwd;
    if (s == "fwd_bwd") return BenchMode::fwd_bwd;
    throw ConfigError("unknown bench mode '" + s + "' (expected fwd or fwd_bwd)");
}

struct BenchResult {
    Variant variant = Variant::transformer;
    std::size_t n = 0;
    std::size_t rank = 0;
    BenchMode mode = BenchMode::fwd;
    int runs = 0;
    std::uint64_t params = 0;
    std::uint64_t macs_fwd = 0;
    std::uint64_t mem_infer_bytes = 0;
    std::uint64_t mem_train_bytes = 0;
    double time_ms_mean = 0.0;
    double time_ms_std = 0.0;
    double speedup_vs_baseline = 1.0;  // baseline_mean / this_mean
    double mem_ratio_pct = 100.0;      // 100 * this_mem / baseline_mem
    std::string error;

    std::string spec_id() const {
        return std::string(variant_name(variant)) + "/n" + std::to_string(n) + "/r" + std::to_string(rank);
    }
};

namespace benchdetail {

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t x = seed ^ (a * 0x9e3779b97f4a7c15ull) ^ (b * 0xbf58476d1ce4e5b9ull) ^
                      (c * 0x94d049bb133111ebull);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
}

}  // namespace benchdetail

// Times `runs` identical executions after `warmup` discarded ones. The
// numeric result of every run must agree bit for bit or the cell fails.
template <typename Real>
BenchResult run_benchmark(const VariantSpec& spec, std::size_t n, BenchMode mode, int runs, int warmup,
                          std::uint64_t seed, std::size_t batch = 1) {
    spec.validate();
    if (runs < 1) throw ConfigError("run_benchmark: runs must be >= 1");
    if (warmup < 0) throw ConfigError("run_benchmark: warmup must be >= 0");
    if (spec.variant == Variant::linformer && n > spec.linformer->n_max) {
        throw SeqLenError("run_benchmark: n " + std::to_string(n) + " exceeds linformer n_max " +
                          std::to_string(spec.linformer->n_max));
    }

    auto stack = build_stack<Real>(spec, seed);
    Rng rng(benchdetail::mix_seed(seed, 1, n, batch));
    Shape xshape = batch == 1 ? Shape{n, spec.model.d_model} : Shape{batch, n, spec.model.d_model};
    Tensor<Real> xv(std::move(xshape));
    for (Real& v : xv.data) v = static_cast<Real>(rng.uniform(-1.0, 1.0));
    auto x = constant(std::move(xv));

    auto run_once = [&]() -> Real {
        if (mode == BenchMode::fwd) {
            auto out = stack_forward(stack, x);
            Real checksum = Real(0);
            for (Real v : out->value.data) checksum += v;
            return checksum;
        }
        stack.params.zero_grad();
        Tape<Real> tape;
        TapeScope<Real> scope(tape);
        auto loss = mean_all(stack_forward(stack, x));
        backward(tape, loss, stack.params);
        return loss->value.data[0];
    };

    using Clock = std::chrono::steady_clock;
    for (int i = 0; i < warmup; ++i) run_once();

    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(runs));
    Real reference = Real(0);
    for (int i = 0; i < runs; ++i) {
        const auto t0 = Clock::now();
        const Real checksum = run_once();
        const auto t1 = Clock::now();
        times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (i == 0) {
            reference = checksum;
        } else if (checksum != reference) {
            throw ValidationError("nondeterministic outputs across benchmark runs of " +
                                  std::string(variant_name(spec.variant)));
        }
    }

    double mean = 0.0;
    for (double t : times) mean += t;
    mean /= static_cast<double>(runs);
    double var = 0.0;
    for (double t : times) var += (t - mean) * (t - mean);
    var /= static_cast<double>(runs);

    BenchResult r;
    r.variant = spec.variant;
    r.n = n;
    r.rank = spec.rank();
    r.mode = mode;
    r.runs = runs;
    r.params = count_stack_params(spec).total();
    r.macs_fwd = macs_forward(spec, n, batch);
    r.mem_infer_bytes = memory_estimate(spec, n, MemMode::infer, sizeof(Real), batch);
    r.mem_train_bytes = memory_estimate(spec, n, MemMode::train, sizeof(Real), batch);
    r.time_ms_mean = mean;
    r.time_ms_std = std::sqrt(var);
    return r;
}

struct SweepGrid {
    std::vector<Variant> variants{Variant::transformer, Variant::lrt, Variant::linformer};
    std::vector<std::size_t> seq_lens{128, 256, 512};
    std::vector<std::size_t> ranks{32, 64};  // r for lrt, k for linformer
    BenchMode mode = BenchMode::fwd;
    int runs = 30;
    int warmup = 3;
    std::size_t batch = 1;
    std::uint64_t seed = 42;
};

// Runs the grid with the transformer cell of matching n as the per-n
// baseline. A failing cell produces a row carrying its error message; the
// sweep continues.
template <typename Real>
std::vector<BenchResult> sweep(const SweepGrid& grid, const ModelConfig& base, std::size_t linformer_n_max) {
    std::vector<BenchResult> rows;
    for (std::size_t n : grid.seq_lens) {
        const std::uint64_t cell_seed = benchdetail::mix_seed(grid.seed, 0, n, 0);
        BenchResult baseline;
        bool have_baseline = false;
        try {
            baseline = run_benchmark<Real>(VariantSpec::make_transformer(base), n, grid.mode, grid.runs,
                                           grid.warmup, cell_seed, grid.batch);
            have_baseline = true;
        } catch (const Error& e) {
            baseline.variant = Variant::transformer;
            baseline.n = n;
            baseline.mode = grid.mode;
            baseline.error = e.what();
        }

        auto baseline_mem = [&](const BenchResult& r) {
            return grid.mode == BenchMode::fwd ? r.mem_infer_bytes : r.mem_train_bytes;
        };

        for (Variant v : grid.variants) {
            std::vector<std::size_t> cell_ranks = v == Variant::transformer ? std::vector<std::size_t>{0} : grid.ranks;
            for (std::size_t rank : cell_ranks) {
                if (v == Variant::transformer) {
                    // the baseline is the transformer cell; emit it directly
                    BenchResult row = baseline;
                    row.speedup_vs_baseline = 1.0;
                    row.mem_ratio_pct = 100.0;
                    rows.push_back(row);
                    continue;
                }
                BenchResult row;
                row.variant = v;
                row.n = n;
                row.rank = rank;
                row.mode = grid.mode;
                try {
                    VariantSpec spec = v == Variant::lrt
                                           ? VariantSpec::make_lrt(base, rank)
                                           : VariantSpec::make_linformer(base, rank, linformer_n_max);
                    row = run_benchmark<Real>(spec, n, grid.mode, grid.runs, grid.warmup,
                                              benchdetail::mix_seed(grid.seed, static_cast<std::uint64_t>(v), n, rank),
                                              grid.batch);
                    if (have_baseline) {
                        row.speedup_vs_baseline = baseline.time_ms_mean / row.time_ms_mean;
                        row.mem_ratio_pct =
                            100.0 * static_cast<double>(baseline_mem(row)) / static_cast<double>(baseline_mem(baseline));
                    } else {
                        row.error = "no baseline for n=" + std::to_string(n);
                    }
                } catch (const Error& e) {
                    row.error = e.what();
                }
                rows.push_back(row);
            }
        }
    }
    return rows;
}

inline constexpr const char* kSweepCsvHeader =
    "variant,n,rank,mode,runs,params,macs_fwd,mem_infer_bytes,mem_train_bytes,time_ms_mean,time_ms_std,"
    "speedup_vs_baseline,mem_ratio_pct,error";

namespace benchdetail {

inline std::string csv_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

inline std::string csv_safe(std::string s) {
    for (char& c : s) {
        if (c == ',' || c == '\n') c = ';';
    }
    return s;
}

}  // namespace benchdetail

inline void write_sweep_csv(const std::vector<BenchResult>& rows, std::ostream& out) {
    out << kSweepCsvHeader << "\n";
    for (const auto& r : rows) {
        out << variant_name(r.variant) << ',' << r.n << ',' << r.rank << ',' << bench_mode_name(r.mode) << ','
            << r.runs << ',' << r.params << ',' << r.macs_fwd << ',' << r.mem_infer_bytes << ','
            << r.mem_train_bytes << ',' << benchdetail::csv_double(r.time_ms_mean) << ','
            << benchdetail::csv_double(r.time_ms_std) << ',' << benchdetail::csv_double(r.speedup_vs_baseline)
            << ',' << benchdetail::csv_double(r.mem_ratio_pct) << ',' << benchdetail::csv_safe(r.error) << "\n";
    }
}

// Head-to-head ratios in log2, one row per (n, rank, mode) cell where both
// low-rank variants produced data. Negative speed values mean the lrt cell
// was faster; negative memory values mean the lrt cell was smaller.
inline void write_ratio_csv(const std::vector<BenchResult>& rows, std::ostream& out) {
    out << "n,rank,mode,log2_speedup_linformer_vs_lrt,log2_mem_lrt_vs_linformer\n";
    for (const auto& lrt_row : rows) {
        if (lrt_row.variant != Variant::lrt || !lrt_row.error.empty()) continue;
        for (const auto& lin_row : rows) {
            if (lin_row.variant != Variant::linformer || !lin_row.error.empty()) continue;
            if (lin_row.n != lrt_row.n || lin_row.rank != lrt_row.rank || lin_row.mode != lrt_row.mode) continue;
            const double speed = std::log2(lin_row.speedup_vs_baseline / lrt_row.speedup_vs_baseline);
            const double mem = std::log2(lrt_row.mem_ratio_pct / lin_row.mem_ratio_pct);
            out << lrt_row.n << ',' << lrt_row.rank << ',' << bench_mode_name(lrt_row.mode) << ','
                << benchdetail::csv_double(speed) << ',' << benchdetail::csv_double(mem) << "\n";
        }
    }
}

}  // namespace gfl
