// Microbenchmark comparing the serial reference kernels against the OpenMP
// kernels, plus end-to-end forward/backward timings of the in-context
// network at eval-scale settings.

#include <chrono>
#include <cstdio>
#include <vector>

#include "ccv/graph.hpp"
#include "ccv/kernels.hpp"
#include "ccv/net.hpp"
#include "ccv/rng.hpp"

using namespace ccv;
using namespace ccv::kernels;
using Clock = std::chrono::steady_clock;

namespace {

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e30;
  for (int i = 0; i < reps; ++i) {
    auto t0 = Clock::now();
    f();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

void bench_conv(int ci, int s, int co, int k) {
  SplitMix64 rng(1);
  ConvDims d{ci, s, s, co, k, k, (k - 1) / 2};
  std::vector<float> x(int64_t(ci) * s * s), w(int64_t(co) * ci * k * k), b(co);
  for (auto& v : x) v = float(rng.uniform(-1, 1));
  for (auto& v : w) v = float(rng.uniform(-1, 1));
  std::vector<float> out(int64_t(co) * d.ho() * d.wo());
  std::vector<float> g(out.size(), 1.0f), gx(x.size()), gw(w.size());

  const double flops = 2.0 * d.ho() * d.wo() * co * ci * k * k;
  const int reps = 20;

  double t_ser = time_best_of(reps, [&] {
    conv2d_forward_serial(x.data(), w.data(), b.data(), out.data(), d);
  });
  set_parallel(true);
  double t_par = time_best_of(reps, [&] {
    conv2d_forward(x.data(), w.data(), b.data(), out.data(), d);
  });
  double t_bis = time_best_of(reps, [&] {
    std::fill(gx.begin(), gx.end(), 0.0f);
    conv2d_backward_input(g.data(), w.data(), gx.data(), d);
  });
  double t_bks = time_best_of(reps, [&] {
    std::fill(gw.begin(), gw.end(), 0.0f);
    conv2d_backward_kernel(g.data(), x.data(), gw.data(), d);
  });

  std::printf("conv %2dx%3dx%3d -> %2d (k=%d) | fwd serial %7.3f ms (%6.2f GF/s) | "
              "fwd omp %7.3f ms (%6.2f GF/s, x%.2f) | bwd-in %7.3f ms | bwd-k %7.3f ms\n",
              ci, s, s, co, k, t_ser, flops / t_ser / 1e6, t_par, flops / t_par / 1e6,
              t_ser / t_par, t_bis, t_bks);
}

void bench_net(int side, int n_ctx) {
  SplitMix64 rng(2);
  ArchDesc arch;
  arch.image_side = side;
  auto w = ModelWeights<float>::random_init(arch, 7);
  Tensor<float> q({1, side, side});
  for (auto& v : q.data()) v = float(rng.uniform(0, 1));
  ContextSet<float> ctx;
  for (int i = 0; i < n_ctx; ++i) {
    ContextPair<float> p;
    p.image = Tensor<float>({1, side, side});
    p.mask = Tensor<float>({1, side, side});
    for (auto& v : p.image.data()) v = float(rng.uniform(0, 1));
    for (auto& v : p.mask.data()) v = float(rng.uniform(0, 1) > 0.5 ? 1.0 : 0.0);
    ctx.push_back(p);
  }

  double t_fwd = time_best_of(5, [&] {
    Graph<float> g;
    forward(g, w, q, ctx);
  });

  Tensor<float> prompt({1, side, side});
  prompt.set_requires_grad(true);
  double t_fb = time_best_of(5, [&] {
    prompt.zero_grad();
    Graph<float> g;
    auto qh = g.add(q, prompt);
    auto loss = g.mean_reduce(forward(g, w, qh, ctx));
    g.backward(loss);
  });

  std::printf("net side %3d N=%d | forward %8.3f ms | forward+backward(prompt) %8.3f ms\n",
              side, n_ctx, t_fwd, t_fb);
}

}  // namespace

int main() {
  std::printf("== conv2d kernels: serial reference vs OpenMP ==\n");
  bench_conv(3, 32, 16, 3);
  bench_conv(32, 32, 16, 3);
  bench_conv(32, 16, 16, 3);
  bench_conv(64, 32, 16, 1);
  bench_conv(17, 64, 8, 3);
  std::printf("== network (float) ==\n");
  bench_net(64, 8);
  bench_net(64, 1);
  bench_net(128, 8);
  return 0;
}
