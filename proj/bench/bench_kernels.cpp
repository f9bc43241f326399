#include <benchmark/benchmark.h>

#include <vector>

#include "imitate/arm_sim.hpp"
#include "imitate/kernels.hpp"
#include "imitate/nn.hpp"
#include "imitate/rng.hpp"

using namespace imitate;

namespace {

// First layer of the default encoder on a 64x64 RGB frame.
const kernels::ConvShape kShape{3, 64, 64, 8, 5, 2, 2};

struct ConvData {
    std::vector<double> in, out, dout, din, dw, db;
    std::vector<float> w, b;

    explicit ConvData(const kernels::ConvShape& s)
        : in(s.in_size()), out(s.out_size()), dout(s.out_size()), din(s.in_size()),
          dw(static_cast<std::size_t>(s.out_channels) * s.in_channels * s.kernel * s.kernel), db(s.out_channels),
          w(dw.size()), b(db.size()) {
        Rng rng(1);
        for (double& v : in) v = rng.uniform();
        for (double& v : dout) v = rng.uniform(-1, 1);
        for (float& v : w) v = static_cast<float>(rng.uniform(-0.3, 0.3));
        for (float& v : b) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    }
};

void BM_ConvForwardReference(benchmark::State& state) {
    ConvData d(kShape);
    for (auto _ : state) {
        kernels::reference::conv2d_forward(kShape, d.in.data(), d.w.data(), d.b.data(), d.out.data());
        benchmark::DoNotOptimize(d.out.data());
    }
}

void BM_ConvForward(benchmark::State& state) {
    ConvData d(kShape);
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        kernels::conv2d_forward(kShape, d.in.data(), d.w.data(), d.b.data(), d.out.data(), threads);
        benchmark::DoNotOptimize(d.out.data());
    }
}

void BM_ConvBackwardReference(benchmark::State& state) {
    ConvData d(kShape);
    for (auto _ : state) {
        kernels::reference::conv2d_backward(kShape, d.in.data(), d.w.data(), d.dout.data(), d.din.data(),
                                            d.dw.data(), d.db.data());
        benchmark::DoNotOptimize(d.din.data());
    }
}

void BM_ConvBackward(benchmark::State& state) {
    ConvData d(kShape);
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state) {
        kernels::conv2d_backward(kShape, d.in.data(), d.w.data(), d.dout.data(), d.din.data(), d.dw.data(),
                                 d.db.data(), threads);
        benchmark::DoNotOptimize(d.din.data());
    }
}

void BM_Render(benchmark::State& state) {
    const ArmModel arm = make_arm(RobotId::IIWA);
    const JointState q{{0.4, -0.8, 1.1, -0.3, 0.6}};
    const RenderConfig cfg;
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(render(arm, q, cfg, threads));
}

void BM_EncodeBatch(benchmark::State& state) {
    const NetworkParams p = init_params(Architecture{}, 1);
    const ArmModel arm = make_arm(RobotId::Panda);
    std::vector<Image> frames;
    for (int i = 0; i < 32; ++i) frames.push_back(render(arm, JointState{{0.05 * i, 0.3, -0.2, 0.1}}, RenderConfig{}));
    const int threads = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(encode(p, frames, threads));
}

}  // namespace

BENCHMARK(BM_ConvForwardReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvForward)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_ConvBackwardReference)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ConvBackward)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_Render)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMicrosecond)->UseRealTime();
BENCHMARK(BM_EncodeBatch)->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
