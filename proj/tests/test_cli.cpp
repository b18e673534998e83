#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "ermcal/metrics.hpp"
#include "ermcal/text_io.hpp"

using namespace ermcal;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
};

class Workspace {
public:
    Workspace() : dir_(fs::temp_directory_path() / ("ermcal_cli_test_" + std::to_string(::getpid()))) {
        fs::create_directories(dir_);
    }
    ~Workspace() { fs::remove_all(dir_); }

    std::string path(const std::string& name) const { return (dir_ / name).string(); }

    Run run(const std::string& args) const {
        const std::string log = path("stdout.txt");
        const std::string cmd = std::string(ERMCAL_CLI_PATH) + " " + args + " > " + log + " 2>&1";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(log)};
    }

private:
    fs::path dir_;
};

double field(const std::string& out, const std::string& key) {
    const auto pos = out.find(key + ": ");
    REQUIRE(pos != std::string::npos);
    const auto end = out.find('\n', pos);
    return parse_double(out.substr(pos + key.size() + 2, end - pos - key.size() - 2));
}

MetricReport metric_row(const std::string& out) {
    const auto lines = split(out, '\n');
    REQUIRE(lines.size() >= 2);
    return parse_metric_csv_row(lines[1]);
}

}  // namespace

TEST_CASE("cli generate") {
    Workspace w;
    const Run r = w.run("generate --toy2d --n 100 --seed 7 --out " + w.path("d.csv"));
    CHECK(r.code == 0);
    const std::string first = read_file(w.path("d.csv"));
    CHECK(split(trim(first), '\n').size() == 101);
    CHECK(w.run("generate --toy2d --n 100 --seed 7 --out " + w.path("d.csv")).code == 0);
    CHECK(read_file(w.path("d.csv")) == first);

    const Run zero = w.run("generate --toy2d --n 0 --out " + w.path("z.csv"));
    CHECK(zero.code == 1);
    CHECK(zero.out.find("--n") != std::string::npos);
    CHECK(w.run("generate --toy2d --n 5 --out /nonexistent_dir/x.csv").code == 2);
    CHECK(w.run("generate --toy2d --n 5 --bogus --out " + w.path("b.csv")).code == 1);
    CHECK(w.run("").code == 1);
}

TEST_CASE("cli train") {
    Workspace w;
    write_file(w.path("zeros.csv"), "x1,y\n0.1,0\n0.5,0\n-1,0\n2,0\n");
    const Run z = w.run("train --data " + w.path("zeros.csv") + " --model krr --lambda 0.1 --out " + w.path("m.txt"));
    REQUIRE(z.code == 0);
    CHECK(field(z.out, "objective") == 0.0);

    REQUIRE(w.run("generate --toy2d --n 80 --seed 3 --out " + w.path("d.csv")).code == 0);
    const Run krr = w.run("train --data " + w.path("d.csv") + " --model krr --kernel laplace --lambda 0.05 --out " +
                          w.path("krr.txt"));
    REQUIRE(krr.code == 0);
    double ones = 0.0;
    const auto rows = split(trim(read_file(w.path("d.csv"))), '\n');
    for (std::size_t i = 1; i < rows.size(); ++i) ones += rows[i].back() == '1' ? 1.0 : 0.0;
    const double budget = std::sqrt(ones / static_cast<double>(rows.size() - 1) / 0.05);
    CHECK(field(krr.out, "hilbert_norm") <= budget + 1e-8);
    CHECK(field(krr.out, "smce_bound") == doctest::Approx(std::sqrt(0.05)));

    const Run klr = w.run("train --data " + w.path("d.csv") + " --model klr --lambda 0.05 --out " + w.path("klr.txt"));
    REQUIRE(klr.code == 0);
    CHECK(field(klr.out, "iterations") <= 1000);
    CHECK(field(klr.out, "err_n") >= 0.0);

    const Run sched = w.run("train --data " + w.path("d.csv") + " --schedule gaussian_half --out " + w.path("s.txt"));
    REQUIRE(sched.code == 0);
    CHECK(field(sched.out, "lambda") == doctest::Approx(1.0 / std::sqrt(80.0)));

    CHECK(w.run("train --data " + w.path("missing.csv") + " --lambda 0.1 --out " + w.path("x.txt")).code == 2);
    CHECK(w.run("train --data " + w.path("d.csv") + " --lambda -1 --out " + w.path("x.txt")).code == 1);
    const Run diverge = w.run("train --data " + w.path("d.csv") + " --model klr --lambda 0.1 --step 1e300 --out " +
                              w.path("x.txt"));
    CHECK(diverge.code == 3);

    const Run eval = w.run("evaluate --model " + w.path("krr.txt") + " --data " + w.path("d.csv"));
    REQUIRE(eval.code == 0);
    const MetricReport m = metric_row(eval.out);
    CHECK(m.n == 80);
    CHECK(satisfies_sandwich(m));
    CHECK_FALSE(m.dual_smce.has_value());
}

TEST_CASE("cli evaluate on prediction files") {
    Workspace w;
    write_file(w.path("perfect.csv"), "# space=probability\nvalue,label\n0,0\n1,1\n1,1\n0,0\n");
    const Run p = w.run("evaluate --predictions " + w.path("perfect.csv"));
    REQUIRE(p.code == 0);
    const MetricReport zero = metric_row(p.out);
    CHECK(zero.smce == 0.0);
    CHECK(*zero.pgap_sq == 0.0);
    CHECK(zero.binned_ece == 0.0);
    CHECK(zero.mmce == 0.0);

    write_file(w.path("one.csv"), "# space=probability\nvalue,label\n0.5,1\n");
    const MetricReport one = metric_row(w.run("evaluate --predictions " + w.path("one.csv")).out);
    CHECK(one.smce == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(*one.pgap_sq == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(one.mmce == doctest::Approx(0.5).epsilon(1e-12));

    CHECK(w.run("evaluate --dual --predictions " + w.path("one.csv")).code == 1);

    write_file(w.path("logits.csv"), "# space=logit\nscore,label\n-2,1\n2,0\n0.5,1\n");
    const Run l = w.run("evaluate --dual --witness --predictions " + w.path("logits.csv"));
    REQUIRE(l.code == 0);
    const MetricReport lr = metric_row(l.out);
    CHECK(lr.dual_smce.has_value());
    CHECK(*lr.dual_smce >= lr.smce - 1e-12);
    CHECK(l.out.find("# smooth_ce witness") != std::string::npos);
    CHECK(l.out.find("# dual_smooth_ce witness") != std::string::npos);

    write_file(w.path("nospace.csv"), "score,label\n0.2,1\n");
    CHECK(w.run("evaluate --predictions " + w.path("nospace.csv")).code == 1);
    write_file(w.path("bad.csv"), "# space=logit\nscore,label\n0.2,1\nxyz,0\n");
    const Run bad = w.run("evaluate --predictions " + w.path("bad.csv"));
    CHECK(bad.code == 1);
    CHECK(bad.out.find("line 4") != std::string::npos);
}

TEST_CASE("cli recalibrate") {
    Workspace w;
    for (const std::string t : {"0.5", "1"}) {
        REQUIRE(w.run("generate --miscalibrated --distortion temperature:" + t + " --n 2000 --seed 1 --out " +
                      w.path("tr" + t + ".csv")).code == 0);
        REQUIRE(w.run("generate --miscalibrated --distortion temperature:" + t + " --n 2000 --seed 2 --out " +
                      w.path("te" + t + ".csv")).code == 0);
    }
    // lambda = 1e-4: at 1e-2 the regularizer dominates these 1-D fits (see README).
    const Run hot = w.run("recalibrate --train " + w.path("tr0.5.csv") + " --test " + w.path("te0.5.csv") +
                          " --lambda 1e-4 --out " + w.path("o.csv"));
    REQUIRE(hot.code == 0);
    CHECK(field(hot.out, "smce_after") < field(hot.out, "smce_before"));
    CHECK(read_file(w.path("o.csv")).rfind("# space=logit\n", 0) == 0);

    const Run same = w.run("recalibrate --train " + w.path("tr1.csv") + " --test " + w.path("te1.csv") +
                           " --lambda 1e-4 --out " + w.path("o1.csv"));
    REQUIRE(same.code == 0);
    CHECK(std::abs(field(same.out, "smce_after") - field(same.out, "smce_before")) <= 0.02);

    const Run krr = w.run("recalibrate --model krr --train " + w.path("tr0.5.csv") + " --test " +
                          w.path("te0.5.csv") + " --lambda 1e-4 --out " + w.path("k.csv"));
    REQUIRE(krr.code == 0);
    CHECK(read_file(w.path("k.csv")).rfind("# space=probability\n", 0) == 0);

    CHECK(w.run("recalibrate --train " + w.path("none.csv") + " --test " + w.path("te1.csv") + " --out " +
                w.path("x.csv")).code == 2);
}

TEST_CASE("cli sweep and plot") {
    Workspace w;
    write_file(w.path("one.cfg"), "axis=sample_size\nn_grid=30\nseeds=1\nkernels=gaussian\nmodels=krr\n"
                                  "data=toy2d\ntest_size=100\n");
    const Run one = w.run("sweep --config " + w.path("one.cfg") + " --out-dir " + w.path("s1"));
    REQUIRE(one.code == 0);
    CHECK(split(trim(read_file(w.path("s1/sweep_rows.csv"))), '\n').size() == 3);
    CHECK(trim(read_file(w.path("s1/trend_report.csv"))) == "check,series,value,threshold,pass");

    write_file(w.path("bad.cfg"), "axis=sample_size\nwidgets=3\n");
    const Run bad = w.run("sweep --config " + w.path("bad.cfg") + " --out-dir " + w.path("s2"));
    CHECK(bad.code == 1);
    CHECK(bad.out.find("widgets") != std::string::npos);

    write_file(w.path("grid.cfg"), "axis=sample_size\nn_range=20:80:4\nseeds=2\nkernels=gaussian\nmodels=krr\n"
                                   "data=toy1d\ntest_size=100\n");
    REQUIRE(w.run("sweep --config " + w.path("grid.cfg") + " --workers 2 --out-dir " + w.path("s3")).code == 0);
    const std::string rows = read_file(w.path("s3/sweep_rows.csv"));
    REQUIRE(w.run("sweep --config " + w.path("grid.cfg") + " --out-dir " + w.path("s4")).code == 0);
    CHECK(read_file(w.path("s4/sweep_rows.csv")) == rows);
    CHECK(read_file(w.path("s3/trend_report.txt")).find("spearman_n") != std::string::npos);

    const Run plot = w.run("plot --agg " + w.path("s3/sweep_agg.csv") + " --out-dir " + w.path("plots"));
    REQUIRE(plot.code == 0);
    CHECK(fs::exists(w.path("plots/smce.svg")));
    CHECK(fs::exists(w.path("plots/mmce.svg")));

    const Run preset = w.run("sweep --preset recalibration --desk --print-config");
    REQUIRE(preset.code == 0);
    CHECK(preset.out.find("distortion=temperature:0.5") != std::string::npos);
    CHECK(w.run("sweep --preset nosuch --out-dir " + w.path("s5")).code == 1);
}
