#include "cppruner/checkpoint.hpp"
#include "cppruner/cli.hpp"
#include "cppruner/io.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

using namespace cppruner;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run run(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Run r;
    r.code = cli_run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

const std::vector<std::string> kSmallNet{"--width", "8", "--layers", "2", "--rank", "4",
                                         "--fourier-terms", "2", "--iters", "30"};

std::vector<std::string> with_net(std::vector<std::string> args) {
    args.insert(args.end(), kSmallNet.begin(), kSmallNet.end());
    return args;
}

} // namespace

TEST(Cli, UsageErrorsExitWithOne) {
    EXPECT_EQ(run({}).code, 1);
    EXPECT_EQ(run({"bogus"}).code, 1);
    const auto r = run({"inpaint", "--out", "x.cpt", "--sr", "0.5"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("--input"), std::string::npos) << r.err;
    EXPECT_EQ(run({"verify", "--suite", "nonsense"}).code, 1);
    EXPECT_EQ(run({"synth", "--out", "x.cpt"}).code, 1);
}

TEST(Cli, HelpExitsWithZero) {
    const auto r = run({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("inpaint"), std::string::npos);
}

TEST(Cli, RuntimeFailureExitsWithTwo) {
    testutil::TempDir dir;
    const auto r = run({"metrics", "--ref", dir.file("missing.cpt"), "--est", dir.file("missing.cpt")});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, VerifyBoundSuitePasses) {
    testutil::TempDir dir;
    const auto r = run({"verify", "--suite", "theorem1", "--n", "20", "--csv", dir.file("r.csv")});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("theorem1: instances=20 failures=0", 0), 0u) << r.out;
    run({"verify", "--suite", "theorem1", "--n", "5", "--csv", dir.file("r.csv")});
    const auto csv = read_file(dir.file("r.csv"));
    EXPECT_EQ(csv.rfind("name,instances,failures,worst,seed\n", 0), 0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST(Cli, MetricsOnIdenticalTensors) {
    testutil::TempDir dir;
    write_tensor(testutil::random_tensor({16, 16, 2}, 1), dir.file("a.cpt"));
    const auto r = run({"metrics", "--ref", dir.file("a.cpt"), "--est", dir.file("a.cpt")});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "psnr=inf ssim=1 nrmse=0\n");
}

TEST(Cli, MetricsOnPointClouds) {
    testutil::TempDir dir;
    write_points({{0, 0, 0}, {1, 0, 0}}, dir.file("a.xyz"));
    const auto r = run({"metrics", "--ref", dir.file("a.xyz"), "--est", dir.file("a.xyz"), "--fscore-thr", "0.1"});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "chamfer=0 fscore=1 threshold=0.1\n");
    EXPECT_EQ(run({"metrics", "--ref", dir.file("a.xyz"), "--est", dir.file("a.xyz"), "--fscore-thr", "x"}).code, 1);
}

TEST(Cli, SynthWritesTensorNoisyCopyAndMask) {
    testutil::TempDir dir;
    const auto r = run({"synth", "--shape", "8x8x4", "--rank", "2", "--noise-case", "2", "--out",
                        dir.file("c.cpt"), "--sparse-out", dir.file("s.cpt")});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_tensor(dir.file("c.cpt")).shape(), (Shape{8, 8, 4}));
    EXPECT_EQ(read_tensor(dir.file("c.noisy.cpt")).shape(), (Shape{8, 8, 4}));
    const auto mask = read_tensor(dir.file("s.cpt"));
    for (double v : mask.values()) EXPECT_TRUE(v == 0.0 || v == 1.0);
    EXPECT_EQ(run({"synth", "--sphere", "50", "--out", dir.file("p.xyz")}).code, 0);
    EXPECT_EQ(read_points(dir.file("p.xyz")).size(), 50u);
}

TEST(Cli, InpaintRerunIsByteIdentical) {
    testutil::TempDir dir;
    ASSERT_EQ(run({"synth", "--shape", "8x8x3", "--rank", "2", "--out", dir.file("t.cpt")}).code, 0);
    auto args = with_net({"inpaint", "--input", dir.file("t.cpt"), "--sr", "0.5", "--truth", dir.file("t.cpt")});
    auto a = args, b = args;
    a.insert(a.end(), {"--out", dir.file("a.cpt"), "--trace", dir.file("a.csv"), "--model-out", dir.file("a.cpf")});
    b.insert(b.end(), {"--out", dir.file("b.cpt"), "--trace", dir.file("b.csv"), "--model-out", dir.file("b.cpf")});
    const auto ra = run(a), rb = run(b);
    ASSERT_EQ(ra.code, 0) << ra.err;
    EXPECT_EQ(ra.out, rb.out);
    EXPECT_EQ(read_file(dir.file("a.cpt")), read_file(dir.file("b.cpt")));
    EXPECT_EQ(read_file(dir.file("a.csv")), read_file(dir.file("b.csv")));
    EXPECT_EQ(read_file(dir.file("a.cpf")), read_file(dir.file("b.cpf")));
    EXPECT_NE(ra.out.find("psnr="), std::string::npos);
}

TEST(Cli, ConfigFileSuppliesDefaultsAndFlagsWin) {
    testutil::TempDir dir;
    ASSERT_EQ(run({"synth", "--shape", "6x6x2", "--out", dir.file("t.cpt")}).code, 0);
    write_file(dir.file("cfg.ini"), "# small run\nwidth = 8\nlayers = 2\nrank = 4\nfourier-terms = 2\n"
                                    "iters = 400\nsr = 0.5\nactivated-head = false\n");
    const auto a = run({"inpaint", "--config", dir.file("cfg.ini"), "--input", dir.file("t.cpt"), "--out",
                        dir.file("a.cpt"), "--iters", "10", "--trace", dir.file("a.csv"), "--trace-every", "100"});
    ASSERT_EQ(a.code, 0) << a.err;
    // 10 steps leave rows at 0 and 9 only.
    const auto trace = read_file(dir.file("a.csv"));
    EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 3);
    write_file(dir.file("bad.ini"), "width 8\n");
    EXPECT_EQ(run({"inpaint", "--config", dir.file("bad.ini"), "--input", dir.file("t.cpt"), "--out",
                   dir.file("b.cpt"), "--sr", "0.5"}).code, 1);
}

TEST(Cli, DenoiseWritesCleanAndSparse) {
    testutil::TempDir dir;
    ASSERT_EQ(run({"synth", "--shape", "8x8x3", "--out", dir.file("t.cpt")}).code, 0);
    const auto r = run(with_net({"denoise", "--input", dir.file("t.cpt"), "--case", "2", "--out",
                                 dir.file("c.cpt"), "--noisy-out", dir.file("n.cpt")}));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(read_tensor(dir.file("c.sparse.cpt")).shape(), (Shape{8, 8, 3}));
    EXPECT_EQ(read_tensor(dir.file("n.cpt")).shape(), (Shape{8, 8, 3}));
    EXPECT_NE(r.out.find("sparse_support="), std::string::npos);
    EXPECT_EQ(run(with_net({"denoise", "--input", dir.file("t.cpt"), "--out", dir.file("c.cpt")})).code, 1);
}

TEST(Cli, SdfUpsampleAndMassPipeline) {
    testutil::TempDir dir;
    ASSERT_EQ(run({"synth", "--sphere", "40", "--out", dir.file("p.xyz")}).code, 0);
    const auto s = run(with_net({"sdf", "--points", dir.file("p.xyz"), "--out", dir.file("m.cpf")}));
    ASSERT_EQ(s.code, 0) << s.err;
    EXPECT_TRUE(read_checkpoint(dir.file("m.cpf")).normalization.has_value());
    const auto u = run({"upsample", "--model", dir.file("m.cpf"), "--out", dir.file("u.xyz"), "--grid", "16",
                        "--tau", "0.5", "--min-count", "1"});
    ASSERT_EQ(u.code, 0) << u.err;
    EXPECT_EQ(u.out.rfind("points=", 0), 0u);
    const auto m = run({"mass", "--model", dir.file("m.cpf"), "--grid", "8"});
    ASSERT_EQ(m.code, 0) << m.err;
    EXPECT_NE(m.out.find("components_above_0.01="), std::string::npos) << m.out;
    EXPECT_EQ(run({"upsample", "--model", dir.file("m.cpf"), "--out", dir.file("u.xyz"), "--tau", "-1"}).code, 1);
}

TEST(Cli, UpsampleWithoutNormalizationFails) {
    testutil::TempDir dir;
    ASSERT_EQ(run({"synth", "--shape", "6x6x2", "--out", dir.file("t.cpt")}).code, 0);
    ASSERT_EQ(run(with_net({"inpaint", "--input", dir.file("t.cpt"), "--sr", "1", "--out", dir.file("o.cpt"),
                            "--model-out", dir.file("g.cpf")}))
                  .code,
              0);
    EXPECT_EQ(run({"upsample", "--model", dir.file("g.cpf"), "--out", dir.file("u.xyz")}).code, 2);
}

TEST(CliBinary, ExecutableRunsAndReportsExitCode) {
    const std::string bin = CPPRUNER_CLI_PATH;
    EXPECT_EQ(std::system((bin + " verify --suite theorem1 --n 3 > /dev/null").c_str()), 0);
    EXPECT_NE(std::system((bin + " inpaint > /dev/null 2>&1").c_str()), 0);
}
