#include "test_util.hpp"
#include "wildsort/embedding_store.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>

using namespace wildsort;
using testutil::TempDir;
using testutil::write_file;

namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

EmbeddingMatrix labeled_sample(Eigen::Index n, Eigen::Index d, unsigned seed) {
    std::vector<ItemRecord> items;
    for (Eigen::Index i = 0; i < n; ++i) {
        ItemRecord r{"img_" + std::to_string(i), std::nullopt, std::nullopt};
        if (i % 3 != 2) r.label = i % 2 ? "red fox" : "badger, adult";
        if (i % 4 == 0) r.crop_ref = "crops/" + std::to_string(i) + ".jpg";
        items.push_back(r);
    }
    return EmbeddingMatrix(items, testutil::gaussian_matrix(n, d, seed));
}

} // namespace

TEST_CASE("csv: three rows, d=4") {
    TempDir dir("csv");
    write_file(dir / "a.csv", "item_id,label,dim_0,dim_1,dim_2,dim_3\n"
                              "a,badger,1,2,3,4\n"
                              "b,,0.5,-1,0,2e-3\n"
                              "c,red fox,9,8,7,6\n");
    const auto m = load_embeddings(dir / "a.csv", Format::Csv);
    CHECK(m.n() == 3);
    CHECK(m.d() == 4);
    CHECK(m.items()[0].label == std::optional<std::string>("badger"));
    CHECK_FALSE(m.items()[1].label.has_value());
    CHECK(m.vectors()(1, 3) == doctest::Approx(2e-3));
    CHECK(m.ids() == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("csv: NaN is rejected with its row") {
    TempDir dir("csvnan");
    write_file(dir / "a.csv", "item_id,label,dim_0,dim_1\n"
                              "a,x,1,2\n"
                              "b,x,nan,2\n");
    try {
        load_embeddings(dir / "a.csv", Format::Csv);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("row 1") != std::string::npos);
    }
}

TEST_CASE("csv: ragged rows and duplicate ids are errors") {
    TempDir dir("csvbad");
    write_file(dir / "ragged.csv", "item_id,label,dim_0,dim_1\na,,1,2\nb,,1\n");
    CHECK_THROWS_AS(load_embeddings(dir / "ragged.csv", Format::Csv), Error);
    write_file(dir / "dup.csv", "item_id,label,dim_0\na,,1\na,,2\n");
    CHECK_THROWS_WITH_AS(load_embeddings(dir / "dup.csv", Format::Csv), doctest::Contains("duplicate"), Error);
    write_file(dir / "header.csv", "id,label,dim_0\na,,1\n");
    CHECK_THROWS_AS(load_embeddings(dir / "header.csv", Format::Csv), Error);
}

TEST_CASE("csv: quoted fields survive") {
    TempDir dir("csvq");
    write_file(dir / "q.csv", "item_id,label,dim_0\n\"a,1\",\"say \"\"hi\"\"\",1.5\n");
    const auto m = load_embeddings(dir / "q.csv", Format::Csv);
    CHECK(m.items()[0].id == "a,1");
    CHECK(*m.items()[0].label == "say \"hi\"");
}

TEST_CASE("jsonl: keys id/label/vec, nullable label") {
    TempDir dir("jsonl");
    write_file(dir / "a.jsonl", "{\"id\":\"a\",\"label\":\"crow\",\"vec\":[1,2,3]}\n"
                                "{\"id\":\"b\",\"label\":null,\"vec\":[0,0,1]}\n");
    const auto m = load_embeddings(dir / "a.jsonl", Format::Jsonl);
    CHECK(m.n() == 2);
    CHECK(m.d() == 3);
    CHECK_FALSE(m.items()[1].label.has_value());

    write_file(dir / "bad.jsonl", "{\"id\":\"a\",\"vec\":[1,2]}\n{\"id\":\"b\",\"vec\":[1]}\n");
    CHECK_THROWS_WITH_AS(load_embeddings(dir / "bad.jsonl", Format::Jsonl), doctest::Contains("row 1"), Error);
    write_file(dir / "null.jsonl", "{\"id\":\"a\",\"vec\":[1,null]}\n");
    CHECK_THROWS_AS(load_embeddings(dir / "null.jsonl", Format::Jsonl), Error);
}

TEST_CASE("rawf32: header N=500, d=1536 round-trips") {
    TempDir dir("raw");
    const auto m = labeled_sample(500, 1536, 11);
    save_embeddings(m, dir / "e.f32", Format::RawF32);
    const auto bytes = read_bytes(dir / "e.f32");
    REQUIRE(bytes.size() == 16 + 500u * 1536u * 4u);
    CHECK(std::memcmp(bytes.data(), "FSEM", 4) == 0);
    // u32 little-endian version, N, d
    CHECK((bytes[4] | bytes[5] << 8) == 1);
    CHECK((bytes[8] | bytes[9] << 8) == 500);
    CHECK((bytes[12] | bytes[13] << 8) == 1536);

    const auto back = load_embeddings(dir / "e.f32", Format::RawF32);
    CHECK(back.n() == 500);
    CHECK(back.d() == 1536);
    CHECK(back.items() == m.items());
    // values were narrowed to f32 on write
    CHECK((back.vectors() - m.vectors().cast<float>().cast<double>()).cwiseAbs().maxCoeff() == 0.0);

    save_embeddings(back, dir / "again.f32", Format::RawF32);
    CHECK(read_bytes(dir / "again.f32") == bytes);
    CHECK(read_bytes(dir / "again.jsonl") == read_bytes(dir / "e.jsonl"));
}

TEST_CASE("rawf32: missing sidecar gives index ids") {
    TempDir dir("rawnoside");
    save_embeddings(labeled_sample(4, 3, 1), dir / "e.f32", Format::RawF32);
    std::filesystem::remove(dir / "e.jsonl");
    const auto m = load_embeddings(dir / "e.f32", Format::RawF32);
    CHECK(m.ids() == std::vector<std::string>{"0", "1", "2", "3"});
    CHECK_FALSE(m.has_any_label());
}

TEST_CASE("rawf32: corrupt files") {
    TempDir dir("rawbad");
    save_embeddings(labeled_sample(4, 3, 1), dir / "e.f32", Format::RawF32);
    auto bytes = read_bytes(dir / "e.f32");

    auto write_bytes = [&](const std::string& name, const std::vector<unsigned char>& b) {
        std::ofstream out(dir / name, std::ios::binary);
        out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    };
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    write_bytes("m.f32", bad_magic);
    CHECK_THROWS_WITH_AS(load_embeddings(dir / "m.f32", Format::RawF32), doctest::Contains("magic"), Error);

    auto truncated = bytes;
    truncated.resize(truncated.size() - 4);
    write_bytes("t.f32", truncated);
    CHECK_THROWS_AS(load_embeddings(dir / "t.f32", Format::RawF32), Error);

    auto inf = bytes;
    const float v = INFINITY;
    std::memcpy(inf.data() + 16 + 4 * 7, &v, 4); // row 2, col 1
    write_bytes("i.f32", inf);
    CHECK_THROWS_WITH_AS(load_embeddings(dir / "i.f32", Format::RawF32), doctest::Contains("row 2"), Error);
}

TEST_CASE("text formats round-trip within 1e-9") {
    TempDir dir("text");
    const auto m = labeled_sample(20, 7, 3);
    for (auto f : {Format::Csv, Format::Jsonl}) {
        const auto p = dir / (std::string("x.") + std::string(format_name(f)));
        save_embeddings(m, p, f);
        const auto back = load_embeddings(p, f);
        CHECK(back.items() == m.items());
        CHECK((back.vectors() - m.vectors()).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("format names and extensions") {
    CHECK(parse_format("rawf32") == Format::RawF32);
    CHECK(format_from_extension("a/b.jsonl") == Format::Jsonl);
    CHECK(format_from_extension("x.f32") == Format::RawF32);
    CHECK_THROWS_AS(parse_format("parquet"), std::invalid_argument);
    CHECK_THROWS_AS(format_from_extension("x.txt"), std::invalid_argument);
}

TEST_CASE("l2_normalize") {
    SUBCASE("3-4-5") {
        RowMatrix v(1, 2);
        v << 3, 4;
        const auto n = l2_normalize(EmbeddingMatrix({{"a", {}, {}}}, v));
        CHECK(n.vectors()(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
        CHECK(n.vectors()(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
    }
    SUBCASE("unit rows unchanged") {
        RowMatrix v(2, 3);
        v << 1, 0, 0, 0, 0.6, 0.8;
        const auto n = l2_normalize(EmbeddingMatrix({{"a", {}, {}}, {"b", {}, {}}}, v));
        CHECK((n.vectors() - v).cwiseAbs().maxCoeff() <= 1e-12);
    }
    SUBCASE("random 10x8 norms") {
        std::vector<ItemRecord> items;
        for (int i = 0; i < 10; ++i) items.push_back({std::to_string(i), {}, {}});
        const auto n = l2_normalize(EmbeddingMatrix(items, testutil::gaussian_matrix(10, 8, 5, 3.0)));
        for (Eigen::Index i = 0; i < 10; ++i) {
            double s = 0;
            for (Eigen::Index j = 0; j < 8; ++j) s += n.vectors()(i, j) * n.vectors()(i, j);
            CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-9);
        }
    }
    SUBCASE("zero row") {
        RowMatrix v = RowMatrix::Ones(3, 2);
        v.row(1).setZero();
        CHECK_THROWS_WITH_AS(l2_normalize(EmbeddingMatrix({{"a", {}, {}}, {"b", {}, {}}, {"c", {}, {}}}, v)),
                             doctest::Contains("row 1"), Error);
    }
}

TEST_CASE("label sidecar merge") {
    TempDir dir("labels");
    const auto m = labeled_sample(5, 2, 9).without_labels();
    write_file(dir / "l.jsonl", "{\"id\":\"img_1\",\"label\":\"polecat\"}\n{\"id\":\"img_3\",\"label\":null}\n");
    const auto merged = apply_label_file(m, dir / "l.jsonl");
    CHECK(merged.items()[1].label == std::optional<std::string>("polecat"));
    CHECK_FALSE(merged.items()[3].label.has_value());
    CHECK(merged.vectors() == m.vectors());

    write_file(dir / "u.jsonl", "{\"id\":\"nope\",\"label\":\"x\"}\n");
    CHECK_THROWS_WITH_AS(apply_label_file(m, dir / "u.jsonl"), doctest::Contains("unknown"), Error);
}

TEST_CASE("matrix accessors") {
    const auto m = labeled_sample(6, 2, 2);
    CHECK(m.has_any_label());
    CHECK_FALSE(m.has_all_labels());
    CHECK_THROWS_AS(m.labels(), Error);
    const std::vector<std::size_t> rows{4, 0};
    const auto sub = m.select_rows(rows);
    CHECK(sub.ids() == std::vector<std::string>{"img_4", "img_0"});
    CHECK(sub.vectors().row(0) == m.vectors().row(4));
    CHECK_THROWS_AS(EmbeddingMatrix({}, RowMatrix(0, 3)), Error);
    CHECK_THROWS_AS(m.with_vectors(RowMatrix::Zero(5, 2)), Error);
}
