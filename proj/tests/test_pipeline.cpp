#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <set>

#include "ctseg/augment.hpp"
#include "ctseg/native_io.hpp"
#include "ctseg/nifti.hpp"
#include "ctseg/phantom.hpp"
#include "ctseg/sampler.hpp"
#include "oracles.hpp"

using namespace ctseg;
namespace fs = std::filesystem;

namespace {

Volume random_image(std::array<int64_t, 3> extents, uint64_t seed) {
  Volume v = Volume::make_image(extents);
  Rng rng(seed);
  for (auto& x : v.image) x = static_cast<float>(rng.uniform(-100, 100));
  return v;
}

fs::path temp_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("ctseg_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("reorient_rai") {
  SECTION("already-RAI volume is returned bitwise identical") {
    Volume v = random_image({3, 4, 5}, 1);
    Volume r = reorient_rai(v);
    CHECK(r.image == v.image);
    CHECK(r.extents == v.extents);
  }
  SECTION("flipped axes restore the original payload") {
    Volume v = random_image({3, 4, 5}, 2);
    Volume flipped = v;
    flipped.set_dir(0, 0, -1.0);  // axis 0 runs L->R now
    for (int64_t x = 0; x < 3; ++x)
      for (int64_t y = 0; y < 4; ++y)
        for (int64_t z = 0; z < 5; ++z)
          flipped.image[static_cast<size_t>(flipped.index(x, y, z))] =
              v.image[static_cast<size_t>(v.index(2 - x, y, z))];
    Volume r = reorient_rai(flipped);
    CHECK(r.image == v.image);
    Volume back = restore_orientation(r, flipped);
    CHECK(back.image == flipped.image);
  }
  SECTION("permuted axes match a direct index-remapping oracle") {
    // voxel axes (0,1,2) run along patient axes (2,0,1)
    Volume v = random_image({2, 3, 4}, 3);
    v.direction = {0, 1, 0, 0, 0, 1, 1, 0, 0};
    v.spacing = {0.5, 1.5, 2.5};
    Volume r = reorient_rai(v);
    CHECK(r.extents == std::array<int64_t, 3>{3, 4, 2});
    CHECK(r.spacing == std::array<double, 3>{1.5, 2.5, 0.5});
    for (int64_t x = 0; x < 2; ++x)
      for (int64_t y = 0; y < 3; ++y)
        for (int64_t z = 0; z < 4; ++z) {
          // input voxel (x,y,z) sits at patient position (y, z, x)
          CHECK(r.image[static_cast<size_t>(r.index(y, z, x))] ==
                v.image[static_cast<size_t>(v.index(x, y, z))]);
        }
    Volume back = restore_orientation(r, v);
    CHECK(back.image == v.image);
  }
  SECTION("oblique orientation beyond tolerance is rejected") {
    Volume v = random_image({2, 2, 2}, 4);
    v.direction = {0.9, 0.0, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 1.0};
    CHECK_THROWS_AS(reorient_rai(v), unsupported_orientation_error);
  }
  SECTION("reorienting twice equals once") {
    Volume v = random_image({3, 4, 5}, 5);
    v.direction = {0, 0, 1, 1, 0, 0, 0, 1, 0};
    Volume once = reorient_rai(v);
    Volume twice = reorient_rai(once);
    CHECK(once.image == twice.image);
    CHECK(once.extents == twice.extents);
  }
}

TEST_CASE("resample_to") {
  SECTION("constant image stays constant at the target size") {
    Volume v = Volume::make_image({5, 6, 7}, 3.5f);
    Volume r = resample_to(v, {8, 4, 9}, ResampleMode::trilinear);
    CHECK(r.extents == std::array<int64_t, 3>{8, 4, 9});
    for (float x : r.image) CHECK_THAT(x, Catch::Matchers::WithinAbs(3.5, 1e-6));
  }
  SECTION("nearest mask resampling never invents labels") {
    Rng rng(6);
    Volume m = Volume::make_mask({6, 6, 6});
    for (auto& l : m.labels) l = static_cast<uint8_t>(rng.uniform_int(0, 3));
    std::set<uint8_t> source(m.labels.begin(), m.labels.end());
    Volume r = resample_to(m, {9, 5, 13}, ResampleMode::nearest);
    for (uint8_t l : r.labels) CHECK(source.count(l) == 1);
  }
  SECTION("down-then-up of a linear ramp reproduces the interior") {
    Volume v = Volume::make_image({1, 1, 32});
    for (int64_t z = 0; z < 32; ++z) v.image[static_cast<size_t>(z)] = static_cast<float>(z);
    Volume down = resample_to(v, {1, 1, 16}, ResampleMode::trilinear);
    Volume up = resample_to(down, {1, 1, 32}, ResampleMode::trilinear);
    for (int64_t z = 3; z < 29; ++z)
      CHECK_THAT(up.image[static_cast<size_t>(z)],
                 Catch::Matchers::WithinAbs(static_cast<double>(z), 1e-6));
  }
  SECTION("spacing rescales by the extent ratio") {
    Volume v = Volume::make_image({10, 10, 10});
    v.spacing = {2.0, 2.0, 2.0};
    Volume r = resample_to(v, {5, 20, 10}, ResampleMode::trilinear);
    CHECK_THAT(r.spacing[0], Catch::Matchers::WithinAbs(4.0, 1e-12));
    CHECK_THAT(r.spacing[1], Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(r.spacing[2], Catch::Matchers::WithinAbs(2.0, 1e-12));
  }
  SECTION("trilinear on a mask is rejected") {
    Volume m = Volume::make_mask({4, 4, 4});
    CHECK_THROWS_AS(resample_to(m, {2, 2, 2}, ResampleMode::trilinear), invalid_argument_error);
  }
}

TEST_CASE("clip_hu") {
  Volume v = Volume::make_image({2, 1, 1});
  v.image = {1000.f, 0.f};
  Volume c = clip_hu(v);
  CHECK(c.image[0] == 300.f);
  CHECK(c.image[1] == 0.f);
  Volume r = random_image({4, 4, 4}, 7);
  for (auto& x : r.image) x *= 10;
  Volume rc = clip_hu(r);
  for (float x : rc.image) {
    CHECK(x >= -300.f);
    CHECK(x <= 300.f);
  }
  CHECK_THROWS_AS(clip_hu(v, 10.f, 10.f), invalid_argument_error);
}

TEST_CASE("zscore") {
  SECTION("hand case [1,2,3]") {
    Volume v = Volume::make_image({3, 1, 1});
    v.image = {1.f, 2.f, 3.f};
    Volume z = zscore(v);
    CHECK_THAT(z.image[0], Catch::Matchers::WithinAbs(-1.224745, 1e-4));
    CHECK_THAT(z.image[1], Catch::Matchers::WithinAbs(0.0, 1e-6));
    CHECK_THAT(z.image[2], Catch::Matchers::WithinAbs(1.224745, 1e-4));
  }
  SECTION("normalized moments") {
    Volume v = random_image({8, 8, 8}, 8);
    Volume z = zscore(v);
    double mean = 0;
    for (float x : z.image) mean += x;
    mean /= static_cast<double>(z.image.size());
    double var = 0;
    for (float x : z.image) var += (x - mean) * (x - mean);
    var /= static_cast<double>(z.image.size());
    CHECK(std::abs(mean) <= 1e-7);
    CHECK(std::abs(std::sqrt(var) - 1.0) <= 1e-6);
  }
  SECTION("constant input maps to zeros") {
    Volume v = Volume::make_image({4, 4, 4}, 11.f);
    Volume z = zscore(v);
    for (float x : z.image) CHECK(x == 0.f);
  }
}

TEST_CASE("crop_with_padding") {
  SECTION("10% padding around a [20,40) box") {
    Volume mask = Volume::make_mask({100, 10, 10});
    for (int64_t x = 20; x < 40; ++x)
      for (int64_t y = 2; y < 8; ++y)
        for (int64_t z = 0; z < 10; ++z)
          mask.labels[static_cast<size_t>(mask.index(x, y, z))] = 1;
    CropBox box = compute_crop_box(mask, 0.10);
    CHECK(box.lo[0] == 18);
    CHECK(box.hi[0] == 42);
    CHECK(box.lo[1] == 1);  // round(0.6) = 1
    CHECK(box.hi[1] == 9);
    CHECK(box.lo[2] == 0);  // clamped at the border
    CHECK(box.hi[2] == 10);
  }
  SECTION("zero padding gives the exact bounding box") {
    Volume mask = Volume::make_mask({10, 10, 10});
    mask.labels[static_cast<size_t>(mask.index(3, 4, 5))] = 2;
    CropBox box = compute_crop_box(mask, 0.0);
    CHECK(box.lo == std::array<int64_t, 3>{3, 4, 5});
    CHECK(box.hi == std::array<int64_t, 3>{4, 5, 6});
  }
  SECTION("empty mask raises empty_mask_error") {
    Volume mask = Volume::make_mask({4, 4, 4});
    CHECK_THROWS_AS(compute_crop_box(mask, 0.1), empty_mask_error);
  }
  SECTION("crop then paste restores the boxed voxels") {
    Rng rng(9);
    Volume mask = Volume::make_mask({12, 12, 12});
    for (int64_t x = 4; x < 9; ++x)
      for (int64_t y = 2; y < 6; ++y)
        for (int64_t z = 5; z < 11; ++z)
          mask.labels[static_cast<size_t>(mask.index(x, y, z))] =
              static_cast<uint8_t>(rng.uniform_int(1, 3));
    CropBox box = compute_crop_box(mask, 0.10);
    Volume piece = crop(mask, box);
    Volume restored = paste_into(piece, box, mask.extents);
    CHECK(restored.labels == mask.labels);
  }
}

TEST_CASE("augment") {
  Case phantom = generate_phantom(1234, {24, 24, 24}, 4);
  const Volume& image = phantom.image;
  const Volume& mask = *phantom.label;

  SECTION("no-op config is the identity") {
    AugmentConfig cfg = AugmentConfig::disabled();
    Rng rng(1);
    auto [ai, am] = augment(image, mask, cfg, rng);
    CHECK(ai.image == image.image);
    CHECK(am.labels == mask.labels);
  }
  SECTION("fixed seed reproduces bitwise") {
    AugmentConfig cfg;
    cfg.prob = 0.9;
    cfg.patch = {16, 8, 16};
    Rng r1(42), r2(42);
    auto [a1, m1] = augment(image, mask, cfg, r1);
    auto [a2, m2] = augment(image, mask, cfg, r2);
    CHECK(a1.image == a2.image);
    CHECK(m1.labels == m2.labels);
    CHECK(a1.extents == std::array<int64_t, 3>{16, 8, 16});
  }
  SECTION("no new label values appear") {
    std::set<uint8_t> source(mask.labels.begin(), mask.labels.end());
    AugmentConfig cfg;
    cfg.prob = 1.0;
    for (uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      auto [ai, am] = augment(image, mask, cfg, rng);
      for (uint8_t l : am.labels) CHECK(source.count(l) == 1);
    }
  }
  SECTION("patch larger than the volume is rejected") {
    AugmentConfig cfg;
    cfg.patch = {32, 8, 8};
    Rng rng(3);
    CHECK_THROWS_AS(augment(image, mask, cfg, rng), invalid_argument_error);
  }
}

TEST_CASE("generate_phantom") {
  SECTION("every foreground class is present and deterministic per seed") {
    Case a = generate_phantom(7, {32, 32, 32}, 4);
    Case b = generate_phantom(7, {32, 32, 32}, 4);
    Case c = generate_phantom(8, {32, 32, 32}, 4);
    CHECK(a.image.image == b.image.image);
    CHECK(a.label->labels == b.label->labels);
    CHECK(a.image.image != c.image.image);
    std::array<int64_t, 4> counts{};
    for (uint8_t l : a.label->labels) ++counts[l];
    for (int cls = 1; cls < 4; ++cls) CHECK(counts[static_cast<size_t>(cls)] >= 1);
  }
  SECTION("ellipsoid voxel counts match the analytic volume within 20%") {
    PhantomConfig cfg;
    cfg.extents = {48, 48, 48};
    std::vector<PhantomEllipsoid> placements;
    generate_phantom(21, cfg, &placements);
    REQUIRE(placements.size() == 3);
    for (const auto& p : placements) {
      const double analytic =
          4.0 / 3.0 * M_PI * p.semi_axes[0] * p.semi_axes[1] * p.semi_axes[2];
      CHECK(std::abs(static_cast<double>(p.voxels) - analytic) / analytic < 0.20);
    }
  }
  SECTION("tiny extents are rejected") {
    CHECK_THROWS_AS(generate_phantom(1, {8, 48, 48}, 4), invalid_argument_error);
  }
  SECTION("impossible placements raise generation_error after bounded retries") {
    PhantomConfig cfg;
    cfg.extents = {24, 24, 24};
    cfg.num_classes = 4;
    cfg.min_semiaxis_frac = 0.45;  // three near-half-volume ellipsoids cannot avoid overlap
    cfg.max_semiaxis_frac = 0.49;
    CHECK_THROWS_AS(generate_phantom(5, cfg), generation_error);
  }
}

TEST_CASE("build_epoch_plan") {
  SECTION("3 labeled, 10 unlabeled alternates L,U over 6 steps") {
    std::vector<std::string> labeled{"a", "b", "c"};
    std::vector<std::string> unlabeled;
    for (int i = 0; i < 10; ++i) unlabeled.push_back("u" + std::to_string(i));
    EpochPlan plan = build_epoch_plan(labeled, unlabeled, 0, 99);
    REQUIRE(plan.steps.size() == 6);
    for (size_t i = 0; i < plan.steps.size(); ++i) {
      CHECK(plan.steps[i].index == static_cast<int>(i));
      CHECK(plan.steps[i].branch == (i % 2 == 0 ? Branch::labeled : Branch::unlabeled));
    }
  }
  SECTION("every labeled id appears exactly once, for many pool sizes") {
    Rng sizes(10);
    for (int trial = 0; trial < 50; ++trial) {
      const int nl = static_cast<int>(sizes.uniform_int(1, 12));
      const int nu = static_cast<int>(sizes.uniform_int(1, 20));
      std::vector<std::string> labeled, unlabeled;
      for (int i = 0; i < nl; ++i) labeled.push_back("l" + std::to_string(i));
      for (int i = 0; i < nu; ++i) unlabeled.push_back("u" + std::to_string(i));
      EpochPlan plan = build_epoch_plan(labeled, unlabeled, trial, 5);
      REQUIRE(plan.steps.size() == static_cast<size_t>(2 * nl));
      std::multiset<std::string> seen;
      std::set<std::string> seen_unlabeled;
      for (const auto& s : plan.steps) {
        if (s.branch == Branch::labeled)
          seen.insert(s.case_id);
        else
          seen_unlabeled.insert(s.case_id);
      }
      for (const auto& id : labeled) CHECK(seen.count(id) == 1);
      if (nu >= nl) CHECK(seen_unlabeled.size() == static_cast<size_t>(nl));  // no replacement
    }
  }
  SECTION("fully supervised plan has labeled steps only") {
    EpochPlan plan = build_epoch_plan({"a", "b"}, {}, 0, 1, /*include_unlabeled=*/false);
    REQUIRE(plan.steps.size() == 2);
    for (const auto& s : plan.steps) CHECK(s.branch == Branch::labeled);
  }
  SECTION("empty labeled pool is rejected") {
    CHECK_THROWS_AS(build_epoch_plan({}, {"u"}, 0, 1), invalid_argument_error);
  }
}

TEST_CASE("native volume round trip") {
  fs::path dir = temp_dir("native_io");
  SECTION("image volume") {
    Volume v = random_image({5, 6, 7}, 11);
    v.spacing = {0.7, 1.1, 2.3};
    write_volume(dir, "img", v);
    Volume r = read_volume(dir / "img.json");
    CHECK(r.kind == VolumeKind::image);
    CHECK(r.extents == v.extents);
    CHECK(r.spacing == v.spacing);
    CHECK(r.direction == v.direction);
    CHECK(r.image == v.image);
  }
  SECTION("mask volume") {
    Rng rng(12);
    Volume m = Volume::make_mask({4, 5, 6});
    for (auto& l : m.labels) l = static_cast<uint8_t>(rng.uniform_int(0, 5));
    write_volume(dir, "mask", m);
    Volume r = read_volume(dir / "mask.json");
    CHECK(r.kind == VolumeKind::mask);
    CHECK(r.labels == m.labels);
  }
  SECTION("missing file raises io_error") {
    CHECK_THROWS_AS(read_volume(dir / "missing.json"), io_error);
  }
}

TEST_CASE("dataset manifest withholds unlabeled labels") {
  fs::path dir = temp_dir("dataset");
  std::vector<Case> cases;
  for (int i = 0; i < 2; ++i) {
    Case c = generate_phantom(static_cast<uint64_t>(i), {16, 16, 16}, 3);
    c.id = "lab" + std::to_string(i);
    c.split = "labeled";
    cases.push_back(std::move(c));
  }
  Case u = generate_phantom(50, {16, 16, 16}, 3);
  u.id = "unlab0";
  u.split = "unlabeled";
  cases.push_back(std::move(u));
  write_dataset(dir, cases, 3);

  DatasetManifest manifest = read_dataset(dir);
  CHECK(manifest.num_classes == 3);
  CHECK(manifest.ids_of("labeled") == std::vector<std::string>{"lab0", "lab1"});
  const DatasetEntry& unlab = manifest.entry("unlab0");
  CHECK(unlab.label_path.empty());
  CHECK_FALSE(fs::exists(dir / "cases" / "unlab0_label.json"));
  Case loaded = load_case(manifest.entry("lab0"));
  CHECK(loaded.label.has_value());
  CHECK(loaded.image.image == cases[0].image.image);
}

namespace {

// Builds an in-memory .nii fixture: 3x2x2 with an sform and/or qform.
std::vector<char> nifti_fixture(int16_t datatype, bool with_sform, bool with_qform) {
  nifti::Header h{};
  h.sizeof_hdr = 348;
  h.dim[0] = 3;
  h.dim[1] = 3;
  h.dim[2] = 2;
  h.dim[3] = 2;
  for (int d = 4; d < 8; ++d) h.dim[d] = 1;
  h.datatype = datatype;
  h.bitpix = datatype == nifti::DT_UINT8 ? 8 : (datatype == nifti::DT_INT16 ? 16 : 32);
  h.pixdim[0] = 1.f;
  h.pixdim[1] = 0.5f;
  h.pixdim[2] = 1.5f;
  h.pixdim[3] = 2.5f;
  h.vox_offset = 352.f;
  h.scl_slope = 0.f;
  if (with_sform) {
    h.sform_code = 1;
    // RAS rows: voxel axis 0 -> -x (toward patient L), axis 1 -> -y (P), axis 2 -> +z (S)
    h.srow_x[0] = -0.5f;
    h.srow_y[1] = -1.5f;
    h.srow_z[2] = 2.5f;
  }
  if (with_qform) {
    h.qform_code = 1;  // identity quaternion: RAS axes
  }
  std::memcpy(h.magic, "n+1", 4);

  std::vector<char> bytes(reinterpret_cast<char*>(&h), reinterpret_cast<char*>(&h) + 348);
  bytes.resize(352, 0);
  const int64_t voxels = 3 * 2 * 2;
  for (int64_t i = 0; i < voxels; ++i) {
    switch (datatype) {
      case nifti::DT_UINT8:
        bytes.push_back(static_cast<char>(i % 3));
        break;
      case nifti::DT_INT16: {
        const int16_t v = static_cast<int16_t>(10 * i);
        bytes.push_back(static_cast<char>(v & 0xff));
        bytes.push_back(static_cast<char>((v >> 8) & 0xff));
        break;
      }
      default: {
        const float v = static_cast<float>(i) * 0.25f;
        const char* p = reinterpret_cast<const char*>(&v);
        bytes.insert(bytes.end(), p, p + 4);
        break;
      }
    }
  }
  return bytes;
}

}  // namespace

TEST_CASE("NIfTI reader") {
  fs::path dir = temp_dir("nifti");
  SECTION("int16 image with sform, RAI axes") {
    auto bytes = nifti_fixture(nifti::DT_INT16, true, false);
    detail::write_file(dir / "a.nii", bytes.data(), bytes.size());
    NiftiVolume nv = read_nifti(dir / "a.nii", VolumeKind::image);
    const Volume& v = nv.volume;
    CHECK(v.extents == std::array<int64_t, 3>{3, 2, 2});
    CHECK_THAT(v.spacing[0], Catch::Matchers::WithinAbs(0.5, 1e-6));
    CHECK_THAT(v.spacing[2], Catch::Matchers::WithinAbs(2.5, 1e-6));
    // sform said -x,-y,+z in RAS == +L,+P,+S in LPS: identity direction
    CHECK_THAT(v.dir(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK_THAT(v.dir(1, 1), Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK_THAT(v.dir(2, 2), Catch::Matchers::WithinAbs(1.0, 1e-6));
    // i fastest in file -> axis 0 of our volume
    CHECK(v.image[static_cast<size_t>(v.index(1, 0, 0))] == 10.f);
    CHECK(v.image[static_cast<size_t>(v.index(0, 1, 0))] == 30.f);
    CHECK(v.image[static_cast<size_t>(v.index(0, 0, 1))] == 60.f);
  }
  SECTION("uint8 mask via qform identity quaternion") {
    auto bytes = nifti_fixture(nifti::DT_UINT8, false, true);
    detail::write_file(dir / "b.nii", bytes.data(), bytes.size());
    NiftiVolume nv = read_nifti(dir / "b.nii", VolumeKind::mask);
    // identity quaternion gives RAS identity == LPS diag(-1,-1,1)
    CHECK_THAT(nv.volume.dir(0, 0), Catch::Matchers::WithinAbs(-1.0, 1e-6));
    CHECK_THAT(nv.volume.dir(1, 1), Catch::Matchers::WithinAbs(-1.0, 1e-6));
    CHECK_THAT(nv.volume.dir(2, 2), Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK(nv.volume.labels[static_cast<size_t>(nv.volume.index(1, 0, 0))] == 1);
  }
  SECTION("sform wins when both sform and qform are set") {
    auto bytes = nifti_fixture(nifti::DT_INT16, true, true);
    detail::write_file(dir / "both.nii", bytes.data(), bytes.size());
    NiftiVolume nv = read_nifti(dir / "both.nii", VolumeKind::image);
    // the sform encodes RAI (LPS identity); the qform would give diag(-1,-1,1)
    CHECK_THAT(nv.volume.dir(0, 0), Catch::Matchers::WithinAbs(1.0, 1e-6));
    CHECK_THAT(nv.volume.dir(1, 1), Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
  SECTION("float32 image payload reads exactly") {
    auto bytes = nifti_fixture(nifti::DT_FLOAT32, true, false);
    detail::write_file(dir / "f.nii", bytes.data(), bytes.size());
    NiftiVolume nv = read_nifti(dir / "f.nii", VolumeKind::image);
    CHECK(nv.volume.image[static_cast<size_t>(nv.volume.index(2, 1, 1))] ==
          static_cast<float>(2 + 3 * (1 + 2 * 1)) * 0.25f);
  }
  SECTION("unsupported fields are named") {
    auto bad_magic = nifti_fixture(nifti::DT_INT16, true, false);
    bad_magic[344] = 'x';
    detail::write_file(dir / "bad_magic.nii", bad_magic.data(), bad_magic.size());
    CHECK_THROWS_WITH(read_nifti(dir / "bad_magic.nii", VolumeKind::image),
                      Catch::Matchers::ContainsSubstring("magic"));

    auto bad_dtype = nifti_fixture(nifti::DT_INT16, true, false);
    bad_dtype[70] = 64;  // DT_FLOAT64
    detail::write_file(dir / "bad_dtype.nii", bad_dtype.data(), bad_dtype.size());
    CHECK_THROWS_WITH(read_nifti(dir / "bad_dtype.nii", VolumeKind::image),
                      Catch::Matchers::ContainsSubstring("datatype"));

    auto no_form = nifti_fixture(nifti::DT_INT16, false, false);
    detail::write_file(dir / "no_form.nii", no_form.data(), no_form.size());
    CHECK_THROWS_WITH(read_nifti(dir / "no_form.nii", VolumeKind::image),
                      Catch::Matchers::ContainsSubstring("sform_code"));

    auto bad_hdr = nifti_fixture(nifti::DT_INT16, true, false);
    bad_hdr[0] = 0;
    detail::write_file(dir / "bad_hdr.nii", bad_hdr.data(), bad_hdr.size());
    CHECK_THROWS_WITH(read_nifti(dir / "bad_hdr.nii", VolumeKind::image),
                      Catch::Matchers::ContainsSubstring("sizeof_hdr"));
  }
  SECTION("mask round trip is bit-exact on the payload") {
    auto bytes = nifti_fixture(nifti::DT_UINT8, true, false);
    detail::write_file(dir / "m.nii", bytes.data(), bytes.size());
    NiftiVolume nv = read_nifti(dir / "m.nii", VolumeKind::mask);
    write_nifti_mask(dir / "m_out.nii", nv.volume, nv.header_bytes);
    NiftiVolume back = read_nifti(dir / "m_out.nii", VolumeKind::mask);
    CHECK(back.volume.labels == nv.volume.labels);
    CHECK(back.volume.extents == nv.volume.extents);
    CHECK(back.volume.direction == nv.volume.direction);
  }
}
