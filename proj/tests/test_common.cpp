#include <doctest.h>

#include <cstdlib>
#include <set>

#include "roadsonar/error.hpp"
#include "roadsonar/exec.hpp"
#include "roadsonar/fileutil.hpp"
#include "roadsonar/rng.hpp"
#include "test_util.hpp"

using namespace roadsonar;

TEST_CASE("derive_seed is deterministic and separates purposes and indices") {
    CHECK(derive_seed(7, "split.test") == derive_seed(7, "split.test"));
    CHECK(derive_seed(7, "split.test") != derive_seed(8, "split.test"));
    CHECK(derive_seed(7, "split.test") != derive_seed(7, "split.folds"));
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(0, "forest.tree", i));
    CHECK(seen.size() == 1000);
}

TEST_CASE("little-endian byte writer and reader round trip") {
    ByteWriter w;
    w.put_bytes("AB");
    w.put_u32(0x01020304u);
    w.put_u64(0x1122334455667788ull);
    w.put_f32(1.5f);
    w.put_f64(-2.25);
    const auto& b = w.buffer();
    REQUIRE(b.size() == 2 + 4 + 8 + 4 + 8);
    CHECK(b[2] == 0x04);
    CHECK(b[5] == 0x01);

    ByteReader r(b, "buf");
    CHECK(r.get_bytes(2) == "AB");
    CHECK(r.get_u32() == 0x01020304u);
    CHECK(r.get_u64() == 0x1122334455667788ull);
    CHECK(r.get_f32() == 1.5f);
    CHECK(r.get_f64() == -2.25);
    CHECK(r.remaining() == 0);
    CHECK_THROWS_AS(r.get_u32(), IoError);
}

TEST_CASE("atomic writes replace the file and leave no temp files") {
    TempDir dir("common");
    const auto p = dir / "out.txt";
    write_file_atomic(p, std::string_view("first"));
    write_file_atomic(p, std::string_view("second"));
    CHECK(read_file_text(p) == "second");
    int count = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path)) ++count;
    CHECK(count == 1);
    CHECK_THROWS_AS(read_file_text(dir / "missing"), IoError);
    CHECK_THROWS_AS(write_file_atomic(dir / "no/such/dir/x", std::string_view("x")), IoError);
}

TEST_CASE("thread cap environment variable") {
    ::setenv(kThreadCapEnv, "1", 1);
    CHECK(apply_thread_cap_from_env() == 1);
    ::unsetenv(kThreadCapEnv);
}
