// Copyright Contributors to the crossmpi project
// SPDX-License-Identifier: Apache-2.0

#include "crossmpi/checkpoint.hpp"
#include "crossmpi/errors.hpp"
#include "crossmpi/safetensors.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

namespace crossmpi {
namespace {

namespace fs = std::filesystem;

std::string read_bytes(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

data::Checkpoint sample_checkpoint() {
    torch::manual_seed(0);
    model::CrossMpiNet net(testing::tiny_config());
    data::Checkpoint state;
    state.config = testing::tiny_config();
    state.parameters = data::collect_parameters(*net);
    state.optimizer_state["sfe.head.weight/exp_avg"] = torch::randn({4, 3, 3, 3});
    state.stage = 2;
    state.iteration = 17;
    state.seed = 42;
    state.rng_state = torch::randint(0, 255, {16}, torch::kUInt8);
    return state;
}

TEST(Safetensors, RoundTripsMixedDtypes) {
    safetensors::TensorFile file;
    file.tensors["a"] = torch::randn({2, 3});
    file.tensors["b"] = torch::randn({4}, torch::kDouble);
    file.tensors["c"] = torch::tensor(7, torch::kLong);
    file.tensors["d"] = torch::randint(0, 200, {5}, torch::kUInt8);
    file.metadata["note"] = "hello \"world\"";
    const auto bytes = safetensors::serialize(file);
    const auto back = safetensors::deserialize(bytes);
    ASSERT_EQ(back.tensors.size(), 4u);
    for (const auto &[name, t] : file.tensors) {
        EXPECT_TRUE(testing::bit_equal(back.tensors.at(name), t)) << name;
    }
    EXPECT_EQ(back.metadata.at("note"), "hello \"world\"");
    EXPECT_EQ(safetensors::serialize(back), bytes);
}

TEST(Safetensors, HeaderLayout) {
    safetensors::TensorFile file;
    file.tensors["x"] = torch::zeros({2}, torch::kFloat);
    const auto bytes = safetensors::serialize(file);
    uint64_t header = 0;
    for (int i = 7; i >= 0; --i) {
        header = (header << 8) | static_cast<unsigned char>(bytes[static_cast<std::size_t>(i)]);
    }
    ASSERT_EQ(bytes.size(), 8 + header + 8);
    const auto json = bytes.substr(8, header);
    EXPECT_NE(json.find("\"dtype\":\"F32\""), std::string::npos);
    EXPECT_NE(json.find("\"data_offsets\":[0,8]"), std::string::npos);
}

TEST(Safetensors, CorruptInputIsCheckpointError) {
    EXPECT_THROW(safetensors::deserialize("abc"), CheckpointError);
    std::string bad(8, '\0');
    bad[0] = 100;
    EXPECT_THROW(safetensors::deserialize(bad + "{}"), CheckpointError);
    std::string junk = std::string("\x04\0\0\0\0\0\0\0", 8) + "nope";
    EXPECT_THROW(safetensors::deserialize(junk), CheckpointError);
    EXPECT_THROW(safetensors::load("/nonexistent/file.safetensors"), CheckpointError);
}

TEST(Checkpoint, SaveLoadIsBitExact) {
    testing::TempDir dir;
    const auto state = sample_checkpoint();
    data::save_checkpoint(state, dir / "a.safetensors");
    const auto loaded = data::load_checkpoint(dir / "a.safetensors");
    EXPECT_EQ(loaded.config, state.config);
    EXPECT_EQ(loaded.stage, 2);
    EXPECT_EQ(loaded.iteration, 17);
    EXPECT_FALSE(loaded.stage_complete);
    EXPECT_EQ(loaded.seed, 42u);
    ASSERT_EQ(loaded.parameters.size(), state.parameters.size());
    for (const auto &[name, t] : state.parameters) {
        EXPECT_TRUE(testing::bit_equal(loaded.parameters.at(name), t)) << name;
    }
    EXPECT_TRUE(testing::bit_equal(loaded.rng_state, state.rng_state));
    data::save_checkpoint(loaded, dir / "b.safetensors");
    EXPECT_EQ(read_bytes(dir / "a.safetensors"), read_bytes(dir / "b.safetensors"));
}

TEST(Checkpoint, BumpedVersionNamesBothVersions) {
    testing::TempDir dir;
    auto state = sample_checkpoint();
    state.format_version = 2;
    data::save_checkpoint(state, dir / "v2.safetensors");
    try {
        data::load_checkpoint(dir / "v2.safetensors");
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError &e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("expected version 1"), std::string::npos);
    }
}

TEST(Checkpoint, ConfigMismatchNamesTheField) {
    testing::TempDir dir;
    data::save_checkpoint(sample_checkpoint(), dir / "a.safetensors");
    auto expected = testing::tiny_config();
    expected.d = 5;
    try {
        data::load_checkpoint(dir / "a.safetensors", &expected);
        FAIL() << "expected CheckpointError";
    } catch (const CheckpointError &e) {
        EXPECT_NE(std::string(e.what()).find("field(s) d"), std::string::npos) << e.what();
    }
    const auto same = testing::tiny_config();
    EXPECT_NO_THROW(data::load_checkpoint(dir / "a.safetensors", &same));
}

TEST(Checkpoint, CorruptOrIncompleteFiles) {
    testing::TempDir dir;
    data::save_checkpoint(sample_checkpoint(), dir / "a.safetensors");
    auto bytes = read_bytes(dir / "a.safetensors");
    std::ofstream(dir / "trunc.safetensors", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_THROW(data::load_checkpoint(dir / "trunc.safetensors"), CheckpointError);

    safetensors::TensorFile no_meta;
    no_meta.tensors["param/x"] = torch::zeros({1});
    safetensors::save(no_meta, dir / "nometa.safetensors");
    EXPECT_THROW(data::load_checkpoint(dir / "nometa.safetensors"), CheckpointError);

    auto file = safetensors::load(dir / "a.safetensors");
    file.tensors["stray"] = torch::zeros({1});
    safetensors::save(file, dir / "stray.safetensors");
    EXPECT_THROW(data::load_checkpoint(dir / "stray.safetensors"), CheckpointError);
}

TEST(Checkpoint, ApplyParametersRequiresExactMatch) {
    torch::manual_seed(1);
    model::CrossMpiNet a(testing::tiny_config()), b(testing::tiny_config());
    const auto params = data::collect_parameters(*a);
    data::apply_parameters(*b, params);
    for (const auto &[name, t] : data::collect_parameters(*b)) {
        EXPECT_TRUE(testing::bit_equal(t, params.at(name))) << name;
    }
    auto missing = params;
    missing.erase(missing.begin());
    EXPECT_THROW(data::apply_parameters(*b, missing), CheckpointError);
    auto extra = params;
    extra["ghost.weight"] = torch::zeros({1});
    EXPECT_THROW(data::apply_parameters(*b, extra), CheckpointError);
    auto reshaped = params;
    reshaped.begin()->second = torch::zeros({1});
    EXPECT_THROW(data::apply_parameters(*b, reshaped), CheckpointError);
}

TEST(Checkpoint, AdamStateRoundTripReproducesTheNextStep) {
    torch::manual_seed(2);
    const auto make = [] {
        auto p = torch::randn({3, 3}, torch::kDouble).set_requires_grad(true);
        return p;
    };
    const auto target = torch::randn({3, 3}, torch::kDouble);
    auto p1 = make();
    auto p2 = p1.detach().clone().set_requires_grad(true);
    torch::optim::Adam opt1({p1}, torch::optim::AdamOptions(0.01));
    const auto step = [&](torch::optim::Adam &opt, torch::Tensor &p) {
        opt.zero_grad();
        (p - target).pow(2).sum().backward();
        opt.step();
    };
    for (int i = 0; i < 3; ++i) {
        step(opt1, p1);
    }
    const auto state = data::capture_adam_state(opt1, {{"p", p1}});
    EXPECT_EQ(state.at("p/step").item<int64_t>(), 3);

    {
        torch::NoGradGuard no_grad;
        p2.copy_(p1);
    }
    torch::optim::Adam opt2({p2}, torch::optim::AdamOptions(0.01));
    data::restore_adam_state(opt2, {{"p", p2}}, state);
    step(opt1, p1);
    step(opt2, p2);
    EXPECT_TRUE(torch::equal(p1, p2));

    auto broken = state;
    broken.erase("p/step");
    EXPECT_THROW(data::restore_adam_state(opt2, {{"p", p2}}, broken), CheckpointError);
    EXPECT_THROW(data::restore_adam_state(opt2, {{"q", p2}}, state), CheckpointError);
}

} // namespace
} // namespace crossmpi
