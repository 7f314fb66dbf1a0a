// Compares the serial reference kernels against the OpenMP versions and
// checks along the way that both produce bit-identical results.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <random>
#include <vector>

#include "qdyn/kernels.hpp"

using namespace qdyn;

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
    fn(); // warmup
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto stop = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() / reps;
}

std::vector<double> random_vec(size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

void bench_matmul(int64_t m, int64_t k, int64_t n, std::mt19937_64& rng) {
    const auto a = random_vec(static_cast<size_t>(m * k), rng);
    const auto b = random_vec(static_cast<size_t>(k * n), rng);
    std::vector<double> c_serial(static_cast<size_t>(m * n));
    std::vector<double> c_par(static_cast<size_t>(m * n));

    const int reps = m * k * n > 1 << 24 ? 3 : 20;
    const double ts = time_ms(reps, [&] {
        kernels::serial::matmul(a.data(), b.data(), c_serial.data(), m, k, n);
    });
    const double tp = time_ms(reps, [&] {
        kernels::par::matmul(a.data(), b.data(), c_par.data(), m, k, n);
    });
    const bool same =
        std::memcmp(c_serial.data(), c_par.data(), c_serial.size() * sizeof(double)) == 0;
    const double gflops = 2.0 * m * k * n / 1e6; // per ms
    std::printf("matmul %4lldx%4lldx%4lld  serial %8.3f ms (%6.2f GF/s)  omp %8.3f ms "
                "(%6.2f GF/s)  speedup %4.2fx  bit-identical %s\n",
                (long long)m, (long long)k, (long long)n, ts, gflops / ts, tp, gflops / tp,
                ts / tp, same ? "yes" : "NO");
}

void bench_conv(int64_t b, int64_t cin, int64_t cout, int64_t len, int64_t kern, int64_t dil,
                std::mt19937_64& rng) {
    const auto x = random_vec(static_cast<size_t>(b * cin * len), rng);
    const auto w = random_vec(static_cast<size_t>(cout * cin * kern), rng);
    const auto bias = random_vec(static_cast<size_t>(cout), rng);
    std::vector<double> ys(static_cast<size_t>(b * cout * len));
    std::vector<double> yp(static_cast<size_t>(b * cout * len));

    const double ts = time_ms(10, [&] {
        kernels::serial::conv1d_causal(x.data(), w.data(), bias.data(), ys.data(), b, cin, cout,
                                       len, kern, dil);
    });
    const double tp = time_ms(10, [&] {
        kernels::par::conv1d_causal(x.data(), w.data(), bias.data(), yp.data(), b, cin, cout,
                                    len, kern, dil);
    });
    const bool same = std::memcmp(ys.data(), yp.data(), ys.size() * sizeof(double)) == 0;
    std::printf("conv1d B=%lld %lld->%lld L=%lld k=%lld d=%lld  serial %8.3f ms  omp %8.3f ms  "
                "speedup %4.2fx  bit-identical %s\n",
                (long long)b, (long long)cin, (long long)cout, (long long)len, (long long)kern,
                (long long)dil, ts, tp, ts / tp, same ? "yes" : "NO");
}

} // namespace

int main() {
    std::printf("kernel benchmark: serial reference vs OpenMP (%d threads)\n",
                kernels::max_threads());
    std::mt19937_64 rng(7);

    bench_matmul(64, 280, 1024, rng);
    bench_matmul(256, 512, 512, rng);
    bench_matmul(512, 512, 2048, rng);

    bench_conv(64, 14, 512, 20, 3, 1, rng);
    bench_conv(64, 512, 512, 20, 3, 2, rng);
    bench_conv(256, 256, 256, 20, 3, 4, rng);
    return 0;
}
