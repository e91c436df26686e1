#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "tipstate/checkpoint.hpp"
#include "tipstate/rng.hpp"
#include "tipstate/zoo.hpp"

using namespace tipstate;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("tipstate_zoo_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

template <typename T>
Tensor4<T> random_input(int n, int side, std::uint64_t seed) {
    Tensor4<T> t(n, 1, side, side);
    Rng rng(seed);
    for (T& v : t.v) v = T(rng.uniform(-1.0, 1.0));
    return t;
}

// Folds the layer list to the spatial size each layer hands to the next.
template <typename T>
int spatial_before_head(const NetworkGraph<T>& net) {
    int side = net.input_side;
    for (const auto& layer : net.layers) {
        if (const auto* conv = std::get_if<Conv2D<T>>(&layer))
            side = conv->out_dim(side);
        else if (std::holds_alternative<MaxPool>(layer))
            side /= 2;
        else if (std::holds_alternative<GlobalAvgPool>(layer) ||
                 std::holds_alternative<Dense<T>>(layer))
            break;
    }
    return side;
}

template <typename T>
int count_batchnorm(const NetworkGraph<T>& net) {
    int n = 0;
    for (const auto& layer : net.layers)
        if (std::holds_alternative<BatchNorm<T>>(layer)) ++n;
    return n;
}

std::vector<char> slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::vector<char>& bytes) {
    std::ofstream os(p, std::ios::binary);
    os.write(bytes.data(), std::streamsize(bytes.size()));
}

}  // namespace

TEST_CASE("squeezenet-like parameter count matches the independent sum") {
    auto net = build_squeezenet_like<double>(4, 128);
    // Independent oracle: walk the channel plan and sum each layer's
    // contribution with explicit arithmetic.
    const int channels[10] = {32, 64, 64, 128, 128, 256, 256, 512, 512, 1024};
    std::size_t want = 0;
    int in_ch = 1;
    for (int i = 0; i < 10; ++i) {
        want += std::size_t(9) * in_ch * channels[i] + channels[i];  // conv w + b
        want += 2 * std::size_t(channels[i]);                        // gamma + beta
        in_ch = channels[i];
    }
    want += std::size_t(1024) * 4 + 4;  // classifier
    REQUIRE(net.param_count() == want);
    REQUIRE(net.param_count() == 9432068u);
}

TEST_CASE("squeezenet-like strides reduce 128 to 4 before pooling") {
    auto net = build_squeezenet_like<double>(4, 128);
    REQUIRE(spatial_before_head(net) == 4);
    REQUIRE(count_batchnorm(net) == 10);
}

TEST_CASE("vgg batchnorm flag toggles exactly eight layers") {
    auto plain = build_vgg_like<double>(4, false, 64);
    auto bn = build_vgg_like<double>(4, true, 64);
    REQUIRE(count_batchnorm(plain) == 0);
    REQUIRE(count_batchnorm(bn) == 8);
    // Conv/pool/dense skeleton is otherwise identical.
    REQUIRE(structural_layer_count(plain) == structural_layer_count(bn));
    REQUIRE(bn.param_count() ==
            plain.param_count() + 2u * (32 + 32 + 64 + 64 + 128 + 128 + 256 + 256));
}

TEST_CASE("vgg flattens four pooled blocks into the first dense layer") {
    auto net = build_vgg_like<double>(3, true, 64);
    REQUIRE(spatial_before_head(net) == 4);
    bool found = false;
    for (const auto& layer : net.layers)
        if (const auto* dense = std::get_if<Dense<double>>(&layer)) {
            REQUIRE(dense->in_features == 256 * 4 * 4);
            found = true;
            break;
        }
    REQUIRE(found);
}

TEST_CASE("rw stand-in counts six structural layers") {
    auto net = build_rw<double>(4, 64);
    REQUIRE(structural_layer_count(net) == 6);
    REQUIRE(count_batchnorm(net) == 0);
}

TEST_CASE("heads end in the requested activation") {
    auto sm = build_rw<double>(4, 32, HeadActivation::Softmax);
    auto sg = build_rw<double>(4, 32, HeadActivation::Sigmoid);
    REQUIRE(std::holds_alternative<Softmax>(sm.layers.back()));
    REQUIRE(std::holds_alternative<Sigmoid>(sg.layers.back()));
    REQUIRE(sm.hyperparams.at("head") == "softmax");
    REQUIRE(sg.hyperparams.at("head") == "sigmoid");
}

TEST_CASE("every architecture forwards a zero image to the neutral prediction") {
    for (const char* arch : {"squeezenet", "vgg", "vgg-bn", "rw"}) {
        auto net = build_network<double>(arch, 4, 32);
        net.mode = Mode::Infer;
        Tensor4<double> zero(1, 1, 32, 32);
        const Tensor4<double> y = net.forward(zero);
        CAPTURE(arch);
        REQUIRE(y.c == 4);
        REQUIRE(y.h == 1);
        REQUIRE(y.w == 1);
        // Zero biases + zero input leave zero logits: softmax gives 1/C.
        for (int c = 0; c < 4; ++c) REQUIRE(std::abs(y.v[c] - 0.25) < 1e-12);
    }
    auto sg = build_rw<double>(3, 32, HeadActivation::Sigmoid);
    sg.mode = Mode::Infer;
    Tensor4<double> zero(1, 1, 32, 32);
    for (double v : sg.forward(zero).v) REQUIRE(v == 0.5);
}

TEST_CASE("validate_chain accepts all builders at supported sides") {
    for (int side : {32, 64}) {
        for (const char* arch : {"squeezenet", "vgg", "vgg-bn", "rw"}) {
            auto net = build_network<double>(arch, 6, side);
            REQUIRE_NOTHROW(validate_chain(net));
        }
    }
}

TEST_CASE("initialization is He-bounded, seeded, and architecture specific") {
    auto a = build_rw<double>(4, 32, HeadActivation::Softmax, 7);
    auto b = build_rw<double>(4, 32, HeadActivation::Softmax, 7);
    auto c = build_rw<double>(4, 32, HeadActivation::Softmax, 8);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    bool any_diff = false, any_nonzero = false;
    for (std::size_t i = 0; i < pa.size(); ++i)
        for (std::size_t k = 0; k < pa[i].size; ++k) {
            REQUIRE(pa[i].data[k] == pb[i].data[k]);
            if (pa[i].data[k] != pc[i].data[k]) any_diff = true;
            if (pa[i].data[k] != 0.0) any_nonzero = true;
        }
    REQUIRE(any_diff);
    REQUIRE(any_nonzero);
    for (const auto& layer : a.layers)
        if (const auto* conv = std::get_if<Conv2D<double>>(&layer)) {
            const double limit = std::sqrt(6.0 / (conv->in_ch * 9));
            for (double w : conv->w.v) REQUIRE(std::abs(w) <= limit);
            for (double bias : conv->b) REQUIRE(bias == 0.0);
        }
}

TEST_CASE("builder arguments are validated") {
    REQUIRE_THROWS_MATCHES(build_network<double>("resnet", 4, 64), Error,
                           ErrorCodeIs(ErrorCode::BadConfig));
    REQUIRE_THROWS_MATCHES(build_squeezenet_like<double>(1, 64), Error,
                           ErrorCodeIs(ErrorCode::BadConfig));
    REQUIRE_THROWS_MATCHES(build_squeezenet_like<double>(4, 48), Error,
                           ErrorCodeIs(ErrorCode::UnsupportedSize));
    REQUIRE_THROWS_MATCHES(build_rw<double>(4, 256), Error,
                           ErrorCodeIs(ErrorCode::UnsupportedSize));
}

TEST_CASE("checkpoints round-trip predictions bit-exactly") {
    TempDir dir;
    auto net = build_vgg_like<double>(3, true, 32, HeadActivation::Softmax, 11);
    // Push running statistics away from their defaults first.
    net.mode = Mode::Train;
    for (int i = 0; i < 3; ++i) net.forward(random_input<double>(4, 32, 100 + i));
    net.mode = Mode::Infer;

    const fs::path file = dir.path / "net.tsck";
    save_checkpoint(net, file);
    auto loaded = load_checkpoint<double>(file);
    REQUIRE(loaded.architecture_id == "vgg-bn");
    REQUIRE(loaded.mode == Mode::Infer);
    REQUIRE(loaded.param_count() == net.param_count());
    for (int i = 0; i < 10; ++i) {
        const auto x = random_input<double>(1, 32, 200 + i);
        const auto y0 = net.forward(x);
        const auto y1 = loaded.forward(x);
        REQUIRE(y0.v == y1.v);
    }
}

TEST_CASE("float networks survive the float64 container exactly") {
    TempDir dir;
    auto net = build_rw<float>(4, 32, HeadActivation::Softmax, 13);
    net.mode = Mode::Infer;
    const fs::path file = dir.path / "net32.tsck";
    save_checkpoint(net, file);
    auto loaded = load_checkpoint<float>(file);
    const auto x = random_input<float>(2, 32, 300);
    REQUIRE(net.forward(x).v == loaded.forward(x).v);
}

TEST_CASE("saving twice produces identical bytes") {
    TempDir dir;
    auto net = build_rw<double>(4, 32, HeadActivation::Softmax, 17);
    const fs::path f1 = dir.path / "a.tsck", f2 = dir.path / "b.tsck";
    save_checkpoint(net, f1);
    save_checkpoint(net, f2);
    REQUIRE(slurp(f1) == slurp(f2));
}

TEST_CASE("peek reads the header without the blobs") {
    TempDir dir;
    auto net = build_rw<double>(5, 64, HeadActivation::Sigmoid, 21);
    const fs::path file = dir.path / "peek.tsck";
    save_checkpoint(net, file);
    const CheckpointHeader h = peek_checkpoint(file);
    REQUIRE(h.version == kCheckpointVersion);
    REQUIRE(h.architecture_id == "rw");
    REQUIRE(h.hyperparams.at("classes") == "5");
    REQUIRE(h.hyperparams.at("side") == "64");
    REQUIRE(h.hyperparams.at("head") == "sigmoid");
    REQUIRE(h.hyperparams.at("init_seed") == "21");
}

TEST_CASE("corrupted checkpoints are rejected") {
    TempDir dir;
    auto net = build_rw<double>(4, 32, HeadActivation::Softmax, 23);
    const fs::path file = dir.path / "net.tsck";
    save_checkpoint(net, file);
    const std::vector<char> bytes = slurp(file);

    SECTION("missing file") {
        REQUIRE_THROWS_MATCHES(load_checkpoint<double>(dir.path / "nope.tsck"), Error,
                               ErrorCodeIs(ErrorCode::IoError));
    }
    SECTION("bad magic") {
        auto bad = bytes;
        bad[0] = 'X';
        spit(file, bad);
        REQUIRE_THROWS_MATCHES(load_checkpoint<double>(file), Error,
                               ErrorCodeIs(ErrorCode::CorruptFile));
    }
    SECTION("future format version") {
        auto bad = bytes;
        bad[4] = char(9);
        spit(file, bad);
        REQUIRE_THROWS_MATCHES(load_checkpoint<double>(file), Error,
                               ErrorCodeIs(ErrorCode::VersionMismatch));
    }
    SECTION("truncation") {
        auto bad = bytes;
        bad.resize(bytes.size() / 2);
        spit(file, bad);
        REQUIRE_THROWS_MATCHES(load_checkpoint<double>(file), Error,
                               ErrorCodeIs(ErrorCode::CorruptFile));
    }
    SECTION("flipped payload byte fails the checksum") {
        auto bad = bytes;
        bad[bad.size() - 12] = char(bad[bad.size() - 12] ^ 0x40);
        spit(file, bad);
        REQUIRE_THROWS_MATCHES(load_checkpoint<double>(file), Error,
                               ErrorCodeIs(ErrorCode::CorruptFile));
    }
}

TEST_CASE("network loader refuses a forest container") {
    TempDir dir;
    auto net = build_rw<double>(4, 32);
    net.architecture_id = "rfc";  // masquerade as the forest container
    const fs::path file = dir.path / "forest.tsck";
    save_checkpoint(net, file);
    REQUIRE_THROWS_MATCHES(load_checkpoint<double>(file), Error,
                           ErrorCodeIs(ErrorCode::BadConfig));
    REQUIRE(peek_checkpoint(file).architecture_id == "rfc");
}

TEST_CASE("backward in infer mode is a mode error") {
    auto net = build_rw<double>(4, 32);
    net.mode = Mode::Infer;
    net.forward(random_input<double>(2, 32, 400));
    Tensor4<double> g(2, 4, 1, 1);
    REQUIRE_THROWS_MATCHES(net.backward(g), Error, ErrorCodeIs(ErrorCode::ModeError));
}
