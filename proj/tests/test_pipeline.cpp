#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "adagan/checkpoint.hpp"
#include "adagan/pipeline.hpp"

using namespace adagan;
namespace fs = std::filesystem;

namespace {

// Seed-derivation stream tags frozen into the pipeline; a silent change to
// either would break every published reproduction recipe.
constexpr uint64_t kExternalInitStream = 0x65787469;
constexpr uint64_t kExternalShuffleStream = 0x65787368;

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("adagan_pipe_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::vector<float> vec(const Tensor<float>& t) {
    auto v = t.values();
    return std::vector<float>(v.begin(), v.end());
}

std::vector<std::vector<float>> snapshot(Network<float>& net) {
    std::vector<std::vector<float>> out;
    for (const auto& t : net.parameters()) out.push_back(vec(t));
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small trained classifier + its data, shared across gate tests.
struct GateFixture {
    LabeledDataset train, test;
    Network<float> net;
};

GateFixture& gate_fixture() {
    static GateFixture* f = [] {
        auto* g = new GateFixture;
        LabeledDataset all = synth_glyph_dataset(3, 40, 1, 7);
        auto split = train_test_split(all, 0.25, 7);
        g->train = std::move(split.first);
        g->test = std::move(split.second);
        auto cands = train_candidates(g->train, g->test, {"mlp"}, 3, 16, 11);
        g->net = std::move(cands[0].network);
        return g;
    }();
    return *f;
}

std::vector<double> manual_confidences(const Tensor<float>& images, int source_class,
                                       const Network<float>& net) {
    Graph<float> g(false);
    Tensor<float> probs = net.forward(g, images);
    std::vector<double> out;
    for (int64_t i = 0; i < probs.dim(0); ++i) {
        out.push_back(probs.values()[i * probs.dim(1) + source_class]);
    }
    return out;
}

}  // namespace

// ---- config ----------------------------------------------------------------

namespace {

// smallest valid config: everything except the dataset falls back to defaults
nlohmann::json minimal_json() { return {{"dataset", {{"kind", "synth"}}}}; }

}  // namespace

TEST_CASE("a minimal config yields the documented defaults") {
    CHECK_THROWS_WITH_AS(config_from_json(nlohmann::json::object()),
                         doctest::Contains("dataset"), ConfigError);
    ExperimentConfig c = config_from_json(minimal_json());
    CHECK(c.dataset.kind == DatasetKind::synth);
    CHECK(c.dataset.classes == 10);
    CHECK(c.dataset.per_class == 200);
    CHECK(c.dataset.complexity == 1);
    CHECK(c.test_fraction == 0.2);
    CHECK(c.split_seed == 42);  // resolved to the master seed
    CHECK(c.candidates == std::vector<std::string>{"mlp", "cnn_small", "cnn_medium", "cnn_wide"});
    CHECK(c.candidate_epochs == 10);
    CHECK(c.gan_epochs == 300);
    CHECK(c.latent_dim == 64);
    CHECK(c.generator_loss == GenLossMode::non_saturating);
    CHECK(c.perturb.mode == PerturbMode::fgsm);
    CHECK(c.perturb.epsilon == 0.05);
    CHECK(c.threshold == 0.8);
    CHECK(c.noise_order == NoiseOrder::perturb_then_gate);
    CHECK(c.augment_per_class == -1);
    CHECK(c.max_attempts_factor == 20);
    CHECK(c.external_epochs == 10);
    CHECK(c.batch_size == 32);
    CHECK(c.seed == 42);
    CHECK(c.output_dir == "out");
}

TEST_CASE("config echo reparses to the same echo") {
    nlohmann::json in = minimal_json();
    in["seed"] = 9;  // resolves split.seed too
    ExperimentConfig c = config_from_json(in);
    c.dataset.classes = 4;
    c.threshold = 0.65;
    c.perturb.epsilon = 0.2;
    c.noise_order = NoiseOrder::gate_then_perturb;
    c.augment_per_class = 12;
    nlohmann::json echo = config_to_json(c);
    ExperimentConfig back = config_from_json(echo);
    CHECK(config_to_json(back) == echo);
    CHECK(back.threshold == 0.65);
    CHECK(back.noise_order == NoiseOrder::gate_then_perturb);
    CHECK(back.dataset.classes == 4);
    CHECK(back.split_seed == 9);
}

TEST_CASE("unknown config keys and bad values are named in the error") {
    auto with = [](const char* key, nlohmann::json value) {
        nlohmann::json j = minimal_json();
        j[key] = std::move(value);
        return j;
    };
    CHECK_THROWS_WITH_AS(config_from_json(with("thresold", 0.8)),
                         doctest::Contains("thresold"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(with("gan", {{"epoch", 3}})),
                         doctest::Contains("gan.epoch"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(with("threshold", 1.0)),
                         doctest::Contains("threshold"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(with("threshold", 0.0)),
                         doctest::Contains("threshold"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(with("perturb", {{"epsilon", 0.6}})),
                         doctest::Contains("epsilon"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(with("perturb", {{"mode", "fgsmm"}})),
                         doctest::Contains("fgsmm"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(with("external_epochs", -1)),
                         doctest::Contains("external_epochs"), ConfigError);
    CHECK_THROWS_AS(config_from_json(with("noise_order", "sideways")), ConfigError);
    CHECK_THROWS_AS(config_from_json({{"dataset", {{"kind", "csv"}}}}), ConfigError);
    CHECK_THROWS_WITH_AS(
        config_from_json({{"dataset", {{"kind", "synth"}, {"root", "x"}}}}),
        doctest::Contains("dataset.root"), ConfigError);
}

TEST_CASE("config files that are missing or malformed are config errors") {
    TempDir dir;
    CHECK_THROWS_AS(parse_config(dir.file("absent.json")), ConfigError);
    write_text_file(dir.file("broken.json"), "{not json");
    CHECK_THROWS_AS(parse_config(dir.file("broken.json")), ConfigError);
    write_text_file(dir.file("ok.json"),
                    R"({"dataset": {"kind": "synth"}, "seed": 7, "threshold": 0.9})");
    ExperimentConfig c = parse_config(dir.file("ok.json"));
    CHECK(c.seed == 7);
    CHECK(c.threshold == 0.9);
    CHECK(c.split_seed == 7);
}

TEST_CASE("noise order names round-trip") {
    for (NoiseOrder o : {NoiseOrder::perturb_then_gate, NoiseOrder::gate_then_perturb,
                         NoiseOrder::perturb_merged}) {
        CHECK(parse_noise_order(noise_order_name(o)) == o);
    }
    CHECK_THROWS_AS(parse_noise_order("both"), ConfigError);
}

// ---- metrics csv -----------------------------------------------------------

TEST_CASE("metrics csv is sorted and round-trips") {
    std::vector<EpochMetric> rows = {
        {"external", 2, "train", "loss", 0.25},
        {"candidate_mlp", 1, "train", "loss", 2.0},
        {"external", 1, "train", "loss", 0.5},
        {"external", 1, "test", "accuracy", 0.75},
    };
    const std::string text = metrics_csv(rows);
    CHECK(text ==
          "stage,epoch,split,metric,value\n"
          "candidate_mlp,1,train,loss,2\n"
          "external,1,test,accuracy,0.75\n"
          "external,1,train,loss,0.5\n"
          "external,2,train,loss,0.25\n");

    auto parsed = parse_metrics_csv(text);
    REQUIRE(parsed.size() == 4);
    CHECK(parsed[0].stage == "candidate_mlp");
    CHECK(parsed[3].value == 0.25);
    CHECK(metrics_csv(parsed) == text);
}

TEST_CASE("metrics values survive the csv round-trip bit-exactly") {
    std::vector<EpochMetric> rows = {
        {"a", 1, "train", "loss", 0.1},
        {"a", 2, "train", "loss", 1.0 / 3.0},
        {"a", 3, "train", "loss", 6.02214076e23},
        {"a", 4, "train", "loss", -7.2e-18},
    };
    auto parsed = parse_metrics_csv(metrics_csv(rows));
    REQUIRE(parsed.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) CHECK(parsed[i].value == rows[i].value);
}

TEST_CASE("metrics fields may not contain separators") {
    CHECK_THROWS_AS(metrics_csv({{"a,b", 1, "train", "loss", 0.0}}), FormatError);
    CHECK_THROWS_AS(metrics_csv({{"a", 1, "tr\nain", "loss", 0.0}}), FormatError);
}

TEST_CASE("malformed metrics csv is rejected with a line number") {
    CHECK_THROWS_AS(parse_metrics_csv("wrong,header\n"), FormatError);
    CHECK_THROWS_WITH_AS(
        parse_metrics_csv("stage,epoch,split,metric,value\na,1,train,loss\n"),
        doctest::Contains("line 2"), FormatError);
    CHECK_THROWS_AS(parse_metrics_csv("stage,epoch,split,metric,value\na,x,train,loss,1\n"),
                    FormatError);
    CHECK_THROWS_AS(parse_metrics_csv("stage,epoch,split,metric,value\na,1,train,loss,zz\n"),
                    FormatError);
}

TEST_CASE("report text is canonical: sorted keys, trailing newline") {
    nlohmann::json j;
    j["zeta"] = 1;
    j["alpha"] = {{"b", 2}, {"a", 1}};
    const std::string text = report_text(j);
    CHECK(text == "{\n  \"alpha\": {\n    \"a\": 1,\n    \"b\": 2\n  },\n  \"zeta\": 1\n}\n");
}

// ---- image grid ------------------------------------------------------------

TEST_CASE("image grid tiles with 2px separators and round-half-up bytes") {
    TempDir dir;
    Tensor<float> images(Shape{4, 1, 28, 28});
    const float levels[4] = {0.2f, 0.4f, 0.6f, 0.8f};
    auto v = images.mutable_values();
    for (int64_t i = 0; i < 4; ++i) {
        std::fill_n(v.data() + i * 784, 784, levels[i]);
    }
    dump_image_grid(images, 2, dir.file("grid.pgm"));

    Tensor<float> grid = load_pgm(dir.file("grid.pgm"));
    REQUIRE(grid.shape() == Shape{1, 58, 58});
    auto g = grid.values();
    auto at = [&](int64_t r, int64_t c) { return g[r * 58 + c]; };
    CHECK(at(0, 0) == 51.0f / 255.0f);    // 0.2 * 255 = 51
    CHECK(at(0, 30) == 102.0f / 255.0f);  // 0.4
    CHECK(at(30, 0) == 153.0f / 255.0f);  // 0.6
    CHECK(at(57, 57) == 204.0f / 255.0f);  // 0.8
    for (int64_t c = 0; c < 58; ++c) {
        CHECK(at(28, c) == 0.0f);
        CHECK(at(29, c) == 0.0f);
        CHECK(at(c, 28) == 0.0f);
        CHECK(at(c, 29) == 0.0f);
    }
}

TEST_CASE("image grid pads the last row with black and clamps columns") {
    TempDir dir;
    Tensor<float> images = Tensor<float>::full(Shape{3, 1, 28, 28}, 1.0f);
    dump_image_grid(images, 2, dir.file("grid3.pgm"));
    Tensor<float> grid = load_pgm(dir.file("grid3.pgm"));
    REQUIRE(grid.shape() == Shape{1, 58, 58});
    CHECK(grid.values()[57 * 58 + 57] == 0.0f);  // unused bottom-right cell
    CHECK(grid.values()[57 * 58 + 0] == 1.0f);   // third image present

    dump_image_grid(images, 9, dir.file("grid_wide.pgm"));
    Tensor<float> wide = load_pgm(dir.file("grid_wide.pgm"));
    CHECK(wide.shape() == Shape{1, 28, 88});  // 3 columns used, not 9

    Tensor<float> bad(Shape{3, 28, 28});
    CHECK_THROWS_AS(dump_image_grid(bad, 2, dir.file("x.pgm")), ContractError);
    CHECK_THROWS_AS(dump_image_grid(images, 0, dir.file("x.pgm")), ContractError);
}

// ---- candidate training and selection ---------------------------------------

TEST_CASE("candidate training is deterministic and names its failures") {
    GateFixture& fx = gate_fixture();
    auto a = train_candidates(fx.train, fx.test, {"mlp"}, 2, 16, 31);
    auto b = train_candidates(fx.train, fx.test, {"mlp"}, 2, 16, 31);
    REQUIRE(a.size() == 1);
    CHECK(a[0].name == "mlp");
    CHECK(a[0].epoch_loss.size() == 2);
    CHECK(a[0].test_accuracy == b[0].test_accuracy);
    CHECK(a[0].train_accuracy == b[0].train_accuracy);
    CHECK(a[0].epoch_loss == b[0].epoch_loss);
    CHECK(snapshot(a[0].network) == snapshot(b[0].network));

    auto c = train_candidates(fx.train, fx.test, {"mlp"}, 2, 16, 99);
    CHECK(snapshot(a[0].network) != snapshot(c[0].network));

    CHECK_THROWS_WITH_AS(train_candidates(fx.train, fx.test, {"nope"}, 1, 16, 1),
                         doctest::Contains("candidate nope"), BuildError);
    CHECK_THROWS_AS(train_candidates(fx.train, fx.test, {}, 1, 16, 1), ContractError);
}

TEST_CASE("the shared fixture classifier actually learned the glyphs") {
    GateFixture& fx = gate_fixture();
    CHECK(evaluate_accuracy(fx.net, fx.test) > 0.5);
}

TEST_CASE("select_best takes the highest test accuracy, earliest on ties") {
    std::vector<CandidateResult> cands(3);
    cands[0].test_accuracy = 0.8;
    cands[1].test_accuracy = 0.9;
    cands[2].test_accuracy = 0.9;
    CHECK(select_best(cands) == 1);  // 0.9 tie resolves to the earlier index
    cands[1].test_accuracy = 0.7;
    cands[2].test_accuracy = 0.8;  // now ties with index 0
    CHECK(select_best(cands) == 0);
    CHECK_THROWS_AS(select_best({}), ContractError);
}

// ---- confidence gate ---------------------------------------------------------

TEST_CASE("gate confidence equals the classifier's softmax output exactly") {
    GateFixture& fx = gate_fixture();
    for (int64_t i : {int64_t(0), int64_t(5), int64_t(17)}) {
        Tensor<float> img = fx.train.image_at(i);
        for (int cls = 0; cls < 3; ++cls) {
            const double conf = manual_confidences(img, cls, fx.net)[0];
            AugmentedSample s = confidence_gate(img, cls, fx.net, 0.5);
            CHECK(s.confidence == conf);
            CHECK(s.label == cls);
            CHECK(s.accepted == (conf >= 0.5));
            CHECK(s.image.shape() == Shape{1, 28, 28});
        }
    }
}

TEST_CASE("the gate is inclusive at the threshold") {
    GateFixture& fx = gate_fixture();
    Tensor<float> img = fx.train.image_at(3);
    const double conf = manual_confidences(img, 0, fx.net)[0];
    REQUIRE(conf > 0.0);
    REQUIRE(conf < 1.0);
    CHECK(confidence_gate(img, 0, fx.net, conf).accepted);
    CHECK_FALSE(confidence_gate(img, 0, fx.net, std::nextafter(conf, 1.0)).accepted);
}

TEST_CASE("gate input validation") {
    GateFixture& fx = gate_fixture();
    Tensor<float> img = fx.train.image_at(0);
    CHECK_THROWS_AS(confidence_gate(img, 3, fx.net, 0.5), ContractError);
    CHECK_THROWS_AS(confidence_gate(img, -1, fx.net, 0.5), ContractError);
    CHECK_THROWS_AS(confidence_gate(img, 0, fx.net, 0.0), ContractError);
    CHECK_THROWS_AS(confidence_gate(img, 0, fx.net, 1.0), ContractError);
    CHECK_THROWS_AS(confidence_gate(Tensor<float>(Shape{2, 1, 28, 28}), 0, fx.net, 0.5),
                    DimensionError);
    CHECK_THROWS_AS(confidence_gate(Tensor<float>(Shape{1, 27, 28}), 0, fx.net, 0.5),
                    DimensionError);
}

// ---- augmentation ------------------------------------------------------------

TEST_CASE("an open gate fills every class to target with a clean audit log") {
    GateFixture& fx = gate_fixture();
    GanConfig gcfg;
    gcfg.latent_dim = 16;
    std::map<int, GanPair> gans;
    for (int c = 0; c < 3; ++c) {
        Rng gr = Rng::derive(1234, 50, static_cast<uint64_t>(c));
        gans.emplace(c, make_gan_pair(c, gcfg, gr));
    }

    const double threshold = 0.01;  // everything passes
    Rng rng = Rng::derive(8, 60, 0);
    AugmentationResult res = generate_augmented_set(gans, fx.net, 5, PerturbSpec{}, threshold,
                                                    40, NoiseOrder::perturb_then_gate, rng);

    CHECK(res.accepted.size() == 15);
    CHECK(res.warnings.empty());
    for (int c = 0; c < 3; ++c) {
        CHECK(res.accepted_per_class.at(c) == 5);
        CHECK(res.generated_per_class.at(c) >= 5);
    }
    for (const AugmentedSample& s : res.accepted) {
        CHECK(s.accepted);
        CHECK(s.confidence >= threshold);
        auto v = vec(s.image);
        CHECK(*std::min_element(v.begin(), v.end()) >= 0.0f);
        CHECK(*std::max_element(v.begin(), v.end()) <= 1.0f);
    }

    // the audit log re-gates to the exact same confidences and decisions
    for (const AugmentedSample& s : res.attempts) {
        AugmentedSample again = confidence_gate(s.image, s.label, fx.net, threshold);
        CHECK(again.confidence == s.confidence);
        CHECK(again.accepted == s.accepted);
        CHECK(s.epsilon_used == PerturbSpec{}.epsilon);
    }
}

TEST_CASE("a near-closed gate accepts nothing and warns per class") {
    GateFixture& fx = gate_fixture();
    GanConfig gcfg;
    gcfg.latent_dim = 16;
    std::map<int, GanPair> gans;
    Rng gr = Rng::derive(1234, 50, 9);
    gans.emplace(1, make_gan_pair(1, gcfg, gr));

    Rng rng = Rng::derive(8, 61, 0);
    AugmentationResult res = generate_augmented_set(gans, fx.net, 4, PerturbSpec{}, 0.9999, 12,
                                                    NoiseOrder::perturb_then_gate, rng);
    CHECK(res.accepted.empty());
    CHECK(res.generated_per_class.at(1) == 12);  // ran to the attempt cap
    CHECK(res.accepted_per_class.at(1) == 0);
    REQUIRE(res.warnings.size() == 1);
    CHECK(res.warnings[0].find("class 1") != std::string::npos);
    CHECK(res.attempts.size() == 12);
}

TEST_CASE("stronger fgsm noise never raises the paired acceptance count") {
    GateFixture& fx = gate_fixture();
    GanConfig gcfg;
    gcfg.latent_dim = 16;
    auto make_gans = [&] {
        std::map<int, GanPair> gans;
        for (int c = 0; c < 3; ++c) {
            Rng gr = Rng::derive(1234, 50, static_cast<uint64_t>(c));
            gans.emplace(c, make_gan_pair(c, gcfg, gr));
        }
        return gans;
    };

    // target == max_attempts keeps the latent stream identical in both runs,
    // so the comparison is sample-by-sample paired
    auto run = [&](double eps) {
        auto gans = make_gans();
        PerturbSpec spec;
        spec.mode = PerturbMode::fgsm;
        spec.epsilon = eps;
        Rng rng = Rng::derive(8, 62, 0);
        return generate_augmented_set(gans, fx.net, 64, spec, 0.2, 64,
                                      NoiseOrder::perturb_then_gate, rng);
    };
    AugmentationResult clean = run(0.0);
    AugmentationResult noisy = run(0.25);
    REQUIRE(clean.attempts.size() == noisy.attempts.size());
    CHECK(clean.accepted.size() > 0);  // otherwise the comparison is vacuous
    CHECK(noisy.accepted.size() <= clean.accepted.size());
    for (size_t i = 0; i < clean.attempts.size(); ++i) {
        CHECK(noisy.attempts[i].epsilon_used == 0.25);
        CHECK(clean.attempts[i].epsilon_used == 0.0);
    }
}

TEST_CASE("perturb_merged defers noise: the gate sees raw generator output") {
    GateFixture& fx = gate_fixture();
    GanConfig gcfg;
    gcfg.latent_dim = 16;
    Rng gr1 = Rng::derive(1234, 51, 0);
    Rng gr2 = Rng::derive(1234, 51, 0);
    std::map<int, GanPair> gans;
    gans.emplace(2, make_gan_pair(2, gcfg, gr1));
    GanPair twin = make_gan_pair(2, gcfg, gr2);

    PerturbSpec spec;
    spec.epsilon = 0.3;
    Rng run_rng = Rng::derive(8, 63, 0);
    Rng twin_rng = Rng::derive(8, 63, 0);
    AugmentationResult res = generate_augmented_set(gans, fx.net, 8, spec, 0.01, 8,
                                                    NoiseOrder::perturb_merged, run_rng);
    Tensor<float> raw = generate(twin, 8, twin_rng);
    REQUIRE(res.attempts.size() == 8);
    for (size_t i = 0; i < 8; ++i) {
        CHECK(res.attempts[i].epsilon_used == 0.0);
        Tensor<float> row(Shape{1, 28, 28});
        std::copy_n(raw.values().data() + i * 784, 784, row.mutable_values().data());
        CHECK(vec(res.attempts[i].image) == vec(row));
    }
}

TEST_CASE("gate_then_perturb gates on raw images but merges perturbed ones") {
    GateFixture& fx = gate_fixture();
    GanConfig gcfg;
    gcfg.latent_dim = 16;
    Rng gr1 = Rng::derive(1234, 52, 0);
    Rng gr2 = Rng::derive(1234, 52, 0);
    std::map<int, GanPair> gans;
    gans.emplace(0, make_gan_pair(0, gcfg, gr1));
    GanPair twin = make_gan_pair(0, gcfg, gr2);

    PerturbSpec spec;
    spec.mode = PerturbMode::fgsm;
    spec.epsilon = 0.2;
    const double threshold = 0.05;
    Rng run_rng = Rng::derive(8, 64, 0);
    Rng twin_rng = Rng::derive(8, 64, 0);
    AugmentationResult res = generate_augmented_set(gans, fx.net, 8, spec, threshold, 8,
                                                    NoiseOrder::gate_then_perturb, run_rng);

    Tensor<float> raw = generate(twin, 8, twin_rng);
    std::vector<int> labels(8, 0);
    Tensor<float> perturbed = fgsm_perturb(raw, labels, fx.net, spec.epsilon);
    std::vector<double> conf = manual_confidences(raw, 0, fx.net);

    REQUIRE(res.attempts.size() == 8);
    size_t accepted_at = 0;
    for (size_t i = 0; i < 8; ++i) {
        Tensor<float> raw_row(Shape{1, 28, 28});
        std::copy_n(raw.values().data() + i * 784, 784, raw_row.mutable_values().data());
        CHECK(vec(res.attempts[i].image) == vec(raw_row));
        CHECK(res.attempts[i].confidence == conf[i]);
        if (conf[i] >= threshold) {
            REQUIRE(accepted_at < res.accepted.size());
            Tensor<float> pert_row(Shape{1, 28, 28});
            std::copy_n(perturbed.values().data() + i * 784, 784,
                        pert_row.mutable_values().data());
            CHECK(vec(res.accepted[accepted_at].image) == vec(pert_row));
            ++accepted_at;
        }
    }
    CHECK(accepted_at == res.accepted.size());
}

TEST_CASE("augmentation preconditions") {
    GateFixture& fx = gate_fixture();
    GanConfig gcfg;
    gcfg.latent_dim = 16;
    Rng gr = Rng::derive(1234, 53, 0);
    std::map<int, GanPair> gans;
    gans.emplace(0, make_gan_pair(0, gcfg, gr));
    Rng rng = Rng::derive(8, 65, 0);
    CHECK_THROWS_AS(generate_augmented_set(gans, fx.net, 0, PerturbSpec{}, 0.5, 10,
                                           NoiseOrder::perturb_then_gate, rng),
                    ContractError);
    CHECK_THROWS_AS(generate_augmented_set(gans, fx.net, 5, PerturbSpec{}, 0.5, 4,
                                           NoiseOrder::perturb_then_gate, rng),
                    ContractError);
    CHECK_THROWS_AS(generate_augmented_set(gans, fx.net, 5, PerturbSpec{}, 1.0, 10,
                                           NoiseOrder::perturb_then_gate, rng),
                    ContractError);
    std::map<int, GanPair> mismatched;
    Rng gr2 = Rng::derive(1234, 53, 1);
    mismatched.emplace(3, make_gan_pair(1, gcfg, gr2));
    CHECK_THROWS_AS(generate_augmented_set(mismatched, fx.net, 1, PerturbSpec{}, 0.5, 10,
                                           NoiseOrder::perturb_then_gate, rng),
                    ContractError);
}

// ---- merging -----------------------------------------------------------------

TEST_CASE("merge appends augmented samples after the real ones") {
    GateFixture& fx = gate_fixture();
    LabeledDataset real = fx.train.subset({0, 1, 2, 3, 4, 5});

    std::vector<AugmentedSample> aug(3);
    for (int i = 0; i < 3; ++i) {
        aug[static_cast<size_t>(i)].image = Tensor<float>::full(Shape{1, 28, 28},
                                                                0.1f * static_cast<float>(i + 1));
        aug[static_cast<size_t>(i)].label = i;
    }

    MergedDataset m = merge_datasets(real, aug);
    CHECK(m.data.size() == 9);
    CHECK(m.data.class_count == real.class_count);
    CHECK(m.is_augmented == std::vector<char>({0, 0, 0, 0, 0, 0, 1, 1, 1}));

    auto head = vec(m.data.batch_images({0, 1, 2, 3, 4, 5}));
    CHECK(head == vec(real.images));
    for (int i = 0; i < 6; ++i) CHECK(m.data.labels[static_cast<size_t>(i)] == real.labels[static_cast<size_t>(i)]);
    for (int i = 0; i < 3; ++i) {
        CHECK(m.data.labels[static_cast<size_t>(6 + i)] == i);
        CHECK(vec(m.data.image_at(6 + i)) == vec(aug[static_cast<size_t>(i)].image));
    }
}

TEST_CASE("merging nothing reproduces the real dataset") {
    GateFixture& fx = gate_fixture();
    MergedDataset m = merge_datasets(fx.train, {});
    CHECK(m.data.size() == fx.train.size());
    CHECK(vec(m.data.images) == vec(fx.train.images));
    CHECK(m.data.labels == fx.train.labels);
    CHECK(std::count(m.is_augmented.begin(), m.is_augmented.end(), 1) == 0);
}

TEST_CASE("merge rejects mislabeled or misshapen samples") {
    GateFixture& fx = gate_fixture();
    AugmentedSample bad_label;
    bad_label.image = Tensor<float>(Shape{1, 28, 28});
    bad_label.label = 3;  // fixture has classes 0..2
    CHECK_THROWS_AS(merge_datasets(fx.train, {bad_label}), ContractError);

    AugmentedSample bad_shape;
    bad_shape.image = Tensor<float>(Shape{1, 27, 28});
    bad_shape.label = 0;
    CHECK_THROWS_AS(merge_datasets(fx.train, {bad_shape}), DimensionError);
}

// ---- external training ---------------------------------------------------------

TEST_CASE("external training with no augmented data is plain cross-entropy") {
    GateFixture& fx = gate_fixture();
    const uint64_t seed = 17;
    const int epochs = 2, batch = 16;
    MergedDataset m = merge_datasets(fx.train, {});
    NetworkSpec spec = classifier_preset("mlp", fx.train.class_count);
    ExternalTrainResult ext = train_external(spec, m, fx.test, epochs, batch, seed);

    // replay the exact training loop with the plain loss
    Rng init = Rng::derive(seed, kExternalInitStream, 0);
    Network<float> manual = build_network<float>(spec, init);
    Optimizer<float> opt(OptimizerKind::adam, 1e-3);
    std::vector<int64_t> order(static_cast<size_t>(fx.train.size()));
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> manual_loss;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        Rng sh = Rng::derive(seed, kExternalShuffleStream, static_cast<uint64_t>(epoch));
        sh.shuffle(order);
        double sum = 0.0;
        int steps = 0;
        for (size_t start = 0; start < order.size(); start += batch) {
            size_t stop = std::min(order.size(), start + batch);
            std::vector<int64_t> idx(order.begin() + static_cast<int64_t>(start),
                                     order.begin() + static_cast<int64_t>(stop));
            Graph<float> g;
            Tensor<float> probs = manual.forward(g, fx.train.batch_images(idx));
            Tensor<float> loss = cross_entropy(g, probs, fx.train.batch_labels(idx));
            sum += loss.item();
            g.backward(loss);
            opt.step(manual.parameters());
            ++steps;
        }
        manual_loss.push_back(sum / steps);
    }

    CHECK(snapshot(ext.network) == snapshot(manual));
    CHECK(ext.epoch_loss == manual_loss);
    CHECK(ext.train_accuracy.size() == 2);
    CHECK(ext.test_accuracy.size() == 2);
}

TEST_CASE("external training handles mixed real and augmented batches") {
    GateFixture& fx = gate_fixture();
    std::vector<AugmentedSample> aug(10);
    Rng noise = Rng::derive(3, 70, 0);
    for (size_t i = 0; i < aug.size(); ++i) {
        aug[i].image = Tensor<float>(Shape{1, 28, 28});
        auto v = aug[i].image.mutable_values();
        for (auto& x : v) x = static_cast<float>(noise.uniform());
        aug[i].label = static_cast<int>(i % 3);
    }
    MergedDataset m = merge_datasets(fx.train, aug);
    NetworkSpec spec = classifier_preset("mlp", fx.train.class_count);
    ExternalTrainResult a = train_external(spec, m, fx.test, 2, 16, 23);
    ExternalTrainResult b = train_external(spec, m, fx.test, 2, 16, 23);
    CHECK(snapshot(a.network) == snapshot(b.network));
    CHECK(a.test_accuracy == b.test_accuracy);
    for (double l : a.epoch_loss) CHECK(std::isfinite(l));
    CHECK(a.epoch_loss.back() < a.epoch_loss.front());
}

TEST_CASE("external training requires real data and matching provenance flags") {
    GateFixture& fx = gate_fixture();
    NetworkSpec spec = classifier_preset("mlp", fx.train.class_count);
    MergedDataset m = merge_datasets(fx.train, {});
    m.is_augmented.pop_back();
    CHECK_THROWS_AS(train_external(spec, m, fx.test, 1, 16, 1), ContractError);

    MergedDataset all_aug = merge_datasets(fx.train, {});
    std::fill(all_aug.is_augmented.begin(), all_aug.is_augmented.end(), 1);
    CHECK_THROWS_AS(train_external(spec, all_aug, fx.test, 1, 16, 1), ContractError);
}

// ---- dataset loading ------------------------------------------------------------

TEST_CASE("synth datasets split deterministically") {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::synth;
    cfg.dataset.classes = 3;
    cfg.dataset.per_class = 40;
    cfg.dataset.complexity = 1;
    cfg.test_fraction = 0.25;
    cfg.seed = 7;

    auto [train, test] = load_split_dataset(cfg);
    CHECK(train.size() == 90);
    CHECK(test.size() == 30);
    CHECK(train.class_count == 3);
    CHECK(test.class_count == 3);

    auto [train2, test2] = load_split_dataset(cfg);
    CHECK(vec(train.images) == vec(train2.images));
    CHECK(train.labels == train2.labels);
    CHECK(vec(test.images) == vec(test2.images));

    ExperimentConfig other = cfg;
    other.split_seed = 9;
    other.split_seed_set = true;
    auto [train3, test3] = load_split_dataset(other);
    CHECK(train3.size() == 90);
    CHECK(vec(test.images) != vec(test3.images));
}

TEST_CASE("idx datasets honor explicit test files and head limits") {
    const std::string dir = ADAGAN_MNIST_DIR;
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::idx;
    cfg.dataset.train_images = dir + "/train-images-idx3-ubyte";
    cfg.dataset.train_labels = dir + "/train-labels-idx1-ubyte";
    cfg.dataset.test_images = dir + "/t10k-images-idx3-ubyte";
    cfg.dataset.test_labels = dir + "/t10k-labels-idx1-ubyte";
    cfg.dataset.limit_train = 120;
    cfg.dataset.limit_test = 40;

    auto [train, test] = load_split_dataset(cfg);
    CHECK(train.size() == 120);
    CHECK(test.size() == 40);
    CHECK(train.class_count == 10);
    CHECK(test.class_count == 10);
}

TEST_CASE("idx datasets without test files are split from train") {
    const std::string dir = ADAGAN_MNIST_DIR;
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::idx;
    cfg.dataset.train_images = dir + "/train-images-idx3-ubyte";
    cfg.dataset.train_labels = dir + "/train-labels-idx1-ubyte";
    cfg.dataset.limit_train = 200;
    cfg.test_fraction = 0.2;
    cfg.seed = 3;

    auto [train, test] = load_split_dataset(cfg);
    CHECK(train.size() + test.size() == 200);
    CHECK(test.size() > 20);
    CHECK(test.size() < 60);
    CHECK(train.class_count == 10);
}

// ---- the full procedure ----------------------------------------------------------

namespace {

ExperimentConfig smoke_config(const std::string& out_dir) {
    ExperimentConfig cfg;
    cfg.dataset.kind = DatasetKind::synth;
    cfg.dataset.classes = 2;
    cfg.dataset.per_class = 48;
    cfg.dataset.complexity = 1;
    cfg.test_fraction = 0.25;
    cfg.candidates = {"mlp"};
    cfg.candidate_epochs = 2;
    cfg.gan_epochs = 2;
    cfg.latent_dim = 16;
    cfg.augment_per_class = 3;
    cfg.threshold = 0.25;
    cfg.perturb.epsilon = 0.05;
    cfg.external_epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 5;
    cfg.output_dir = out_dir;
    return cfg;
}

}  // namespace

TEST_CASE("run_ada_gan produces a coherent report and all artifacts") {
    TempDir dir;
    ExperimentConfig cfg = smoke_config(dir.file("run"));
    PipelineReport report = run_ada_gan(cfg);

    CHECK(report.failed_stage.empty());
    CHECK(report.selected_name == "mlp");
    CHECK(report.baseline_test_accuracy == report.candidates[0].test_accuracy);
    CHECK(report.acceptance_rate >= 0.0);
    CHECK(report.acceptance_rate <= 1.0);
    CHECK(report.external.test_accuracy.size() == 2);
    CHECK(report.external.epoch_loss.size() == 2);

    CHECK(fs::exists(dir.file("run/report.json")));
    CHECK(fs::exists(dir.file("run/metrics.csv")));
    CHECK(fs::exists(dir.file("run/resolved_config.json")));
    CHECK(fs::exists(dir.file("run/voted_classifier.ckpt")));
    CHECK(fs::exists(dir.file("run/classifier.ckpt")));
    CHECK(fs::exists(dir.file("run/gan_class_000.ckpt")));
    CHECK(fs::exists(dir.file("run/gan_class_001.ckpt")));
    if (!report.augmentation.accepted.empty()) {
        CHECK(fs::exists(dir.file("run/accepted_samples.pgm")));
    }

    // every persisted artifact parses back
    auto rows = parse_metrics_csv(slurp(dir.file("run/metrics.csv")));
    CHECK(rows.size() == report.metrics.size());
    bool saw_candidate = false, saw_gan = false, saw_external = false, saw_augment = false;
    for (const auto& r : rows) {
        if (r.stage == "candidate_mlp") saw_candidate = true;
        if (r.stage == "gan_class_001") saw_gan = true;
        if (r.stage == "external") saw_external = true;
        if (r.stage == "augment") saw_augment = true;
    }
    CHECK(saw_candidate);
    CHECK(saw_gan);
    CHECK(saw_external);
    CHECK(saw_augment);

    nlohmann::json rj = nlohmann::json::parse(slurp(dir.file("run/report.json")));
    CHECK(rj["selected"] == "mlp");
    CHECK(rj["failed_stage"] == "");
    CHECK(rj["external"]["final_test_accuracy"].get<double>() ==
          report.external.test_accuracy.back());

    ExperimentConfig echoed =
        config_from_json(nlohmann::json::parse(slurp(dir.file("run/resolved_config.json"))));
    CHECK(config_to_json(echoed) == config_to_json(cfg));

    Network<float> voted = load_network(dir.file("run/voted_classifier.ckpt"));
    CHECK(snapshot(voted) == snapshot(report.candidates[0].network));
    Network<float> external = load_network(dir.file("run/classifier.ckpt"));
    CHECK(snapshot(external) == snapshot(report.external.network));
    GanPair g0 = load_gan_pair(dir.file("run/gan_class_000.ckpt"));
    CHECK(g0.class_id == 0);
    CHECK(g0.epochs_trained == 2);
}

TEST_CASE("run_ada_gan is byte-deterministic") {
    TempDir dir;
    ExperimentConfig cfg = smoke_config(dir.file("run"));
    run_ada_gan(cfg);
    const std::string report1 = slurp(dir.file("run/report.json"));
    const std::string metrics1 = slurp(dir.file("run/metrics.csv"));
    const std::string config1 = slurp(dir.file("run/resolved_config.json"));
    run_ada_gan(cfg);
    CHECK(slurp(dir.file("run/report.json")) == report1);
    CHECK(slurp(dir.file("run/metrics.csv")) == metrics1);
    CHECK(slurp(dir.file("run/resolved_config.json")) == config1);
}

TEST_CASE("a zero augmentation target reduces to baseline training") {
    TempDir dir;
    ExperimentConfig cfg = smoke_config(dir.file("run"));
    cfg.augment_per_class = 0;
    PipelineReport report = run_ada_gan(cfg);

    CHECK(report.augmentation.attempts.empty());
    CHECK(report.acceptance_rate == 0.0);
    CHECK_FALSE(fs::exists(dir.file("run/gan_class_000.ckpt")));

    auto [train, test] = load_split_dataset(cfg);
    auto cands = train_candidates(train, test, cfg.candidates, cfg.candidate_epochs,
                                  cfg.batch_size, cfg.seed);
    MergedDataset m = merge_datasets(train, {});
    ExternalTrainResult manual =
        train_external(cands[0].network.spec, m, test, cfg.external_epochs, cfg.batch_size,
                       cfg.seed);
    CHECK(snapshot(report.external.network) == snapshot(manual.network));
    CHECK(report.external.test_accuracy == manual.test_accuracy);
    CHECK(report.external.epoch_loss == manual.epoch_loss);
}

TEST_CASE("a failing stage is recorded in the persisted report") {
    TempDir dir;
    ExperimentConfig cfg = smoke_config(dir.file("run"));
    cfg.dataset.kind = DatasetKind::idx;
    cfg.dataset.train_images = dir.file("missing-images");
    cfg.dataset.train_labels = dir.file("missing-labels");
    CHECK_THROWS_AS(run_ada_gan(cfg), IoError);
    nlohmann::json rj = nlohmann::json::parse(slurp(dir.file("run/report.json")));
    CHECK(rj["failed_stage"] == "load_data");

    TempDir dir2;
    ExperimentConfig cfg2 = smoke_config(dir2.file("run"));
    cfg2.candidates = {"nope"};
    CHECK_THROWS_WITH_AS(run_ada_gan(cfg2), doctest::Contains("candidate nope"), BuildError);
    nlohmann::json rj2 = nlohmann::json::parse(slurp(dir2.file("run/report.json")));
    CHECK(rj2["failed_stage"] == "train_candidates");
    CHECK(rj2["candidates"].empty());
}
