#include "jscc/checkpoint.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <fstream>

namespace {

using namespace jscc;
namespace jt = jscc::testing;

std::vector<float> flat(const codec::JsccModel& m) {
    std::vector<float> out;
    for (const auto& p : m.parameters()) out.insert(out.end(), p.var.value().begin(), p.var.value().end());
    return out;
}

TEST(Checkpoint, RoundTripRestoresParametersAndHeader) {
    const auto cfg = jt::tiny_config();
    codec::JsccModel m(cfg, 17);
    const auto dir = jt::temp_dir("ckpt");
    save_checkpoint(dir / "m.ckpt", m, {12, 0.0125, "tag"});

    const auto h = read_checkpoint_header(dir / "m.ckpt");
    EXPECT_EQ(h.version, kCheckpointVersion);
    EXPECT_EQ(h.hash, architecture_hash(cfg));
    EXPECT_EQ(to_json(h.config), to_json(cfg));
    EXPECT_EQ(h.dimensions_json, dimensions_to_json(cfg.dims, -1));
    EXPECT_EQ(h.info.epoch, 12);
    EXPECT_EQ(h.info.metric, 0.0125);
    EXPECT_EQ(h.info.tag, "tag");

    const auto loaded = load_model(dir / "m.ckpt");
    EXPECT_EQ(flat(*loaded), flat(m));

    codec::JsccModel other(cfg, 18);
    EXPECT_NE(flat(other), flat(m));
    load_parameters(dir / "m.ckpt", other);
    EXPECT_EQ(flat(other), flat(m));

    // Same weights give the same reconstruction.
    const auto data = jt::synthetic_dataset(2, 1);
    const auto info = codec::make_side_info(cfg, 2, 7.0);
    EXPECT_EQ(loaded->reconstruct(data.range(0, 2), info, nullptr).pixels,
              m.reconstruct(data.range(0, 2), info, nullptr).pixels);
}

TEST(Checkpoint, ArchitectureMismatchIsRejected) {
    const auto cfg = jt::tiny_config();
    codec::JsccModel m(cfg, 1);
    const auto dir = jt::temp_dir("ckpt-mismatch");
    save_checkpoint(dir / "m.ckpt", m, {});

    auto other = cfg;
    other.model.embed_dim = 24;
    other.dims = derive_dimensions(other.grid, other.model);
    EXPECT_THROW(load_model(dir / "m.ckpt", other), CheckpointError);
    codec::JsccModel wrong(other, 1);
    EXPECT_THROW(load_parameters(dir / "m.ckpt", wrong), CheckpointError);

    // Training-only fields do not change the architecture.
    auto retrained = cfg;
    retrained.train.lr = 0.5;
    EXPECT_NO_THROW(load_model(dir / "m.ckpt", retrained));
}

TEST(Checkpoint, CorruptOrMissingFilesAreRejected) {
    const auto cfg = jt::tiny_config();
    codec::JsccModel m(cfg, 1);
    const auto dir = jt::temp_dir("ckpt-corrupt");
    EXPECT_THROW(read_checkpoint_header(dir / "missing.ckpt"), CheckpointError);

    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
    EXPECT_THROW(read_checkpoint_header(dir / "junk.ckpt"), CheckpointError);

    save_checkpoint(dir / "m.ckpt", m, {});
    const auto size = std::filesystem::file_size(dir / "m.ckpt");
    std::filesystem::resize_file(dir / "m.ckpt", size - 100);
    EXPECT_THROW(load_model(dir / "m.ckpt"), CheckpointError);
}

}  // namespace
