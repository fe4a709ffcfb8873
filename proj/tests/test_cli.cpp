#include "ipdm/commands.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <array>
#include <cstdio>
#include <sys/wait.h>

using namespace ipdm;

namespace
{

struct Run
{
    int code = -1;
    std::string output;  ///< stdout and stderr together
};

Run cli(const std::string& args)
{
    const std::string cmd = std::string("'") + IPDM_CLI_PATH + "' " + args + " 2>&1";
    Run r;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0)
        r.output.append(buf.data(), n);
    const int status = ::pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

const char* kSmallConfig = "time_span=30\nseries=120\ninspectors=8\nsigma_v=1,4\nsigma_w=0.05\nseed=5\n";

} // namespace

TEST_CASE("usage errors exit with status 1")
{
    const auto unknown = cli("generate --config x.cfg --bogus 1");
    CHECK(unknown.code == 1);
    CHECK(unknown.output.find("--bogus") != std::string::npos);
    CHECK(unknown.output.find("Usage") != std::string::npos);

    CHECK(cli("").code == 1);
    CHECK(cli("dance").code == 1);
    CHECK(cli("generate").code == 1);
    CHECK(cli("--help").code == 0);
}

TEST_CASE("user errors exit with status 1 and say what went wrong")
{
    test::TempDir dir("cli_user");
    const auto missing = cli("generate --config " + q(dir / "nope.cfg") + " --out " + q(dir / "ds"));
    CHECK(missing.code == 1);
    CHECK(missing.output.find("nope.cfg") != std::string::npos);

    dir.write("bad.cfg", "series=ten\n");
    CHECK(cli("generate --config " + q(dir / "bad.cfg") + " --out " + q(dir / "ds")).code == 1);
    CHECK(cli("verify --data " + q(dir / "none") + " --params " + q(dir / "p.ipdm") + " --out " + q(dir / "v")).code ==
          1);
}

TEST_CASE("generate, train and verify from the command line")
{
    test::TempDir dir("cli_loop");
    dir.write("small.cfg", kSmallConfig);
    const auto gen = cli("generate --config " + q(dir / "small.cfg") + " --out " + q(dir / "ds"));
    REQUIRE(gen.code == 0);
    for (const auto& name : synth_artifact_names())
        CHECK(std::filesystem::exists(dir / "ds" / name));

    const auto train = cli("train --data " + q(dir / "ds") + " --max-iter 3 --seed 2 --out " + q(dir / "fit"));
    REQUIRE(train.code == 0);
    CHECK(std::filesystem::exists(dir / "fit" / "params_synthetic.ipdm"));
    CHECK(std::filesystem::exists(dir / "fit" / "recovery.csv"));

    const auto verify = cli("verify --data " + q(dir / "ds") + " --params " + q(dir / "fit" / "params_synthetic.ipdm") +
                            " --horizon 4 --elements 40 --out " + q(dir / "ver"));
    REQUIRE(verify.code == 0);
    for (const char* name : {"verify_signed.csv", "verify_absolute.csv", "verify_condition_units.csv",
                             "verify_condition.png", "verify_speed.png", "verify_acceleration.png"})
        CHECK(std::filesystem::exists(dir / "ver" / name));

    SUBCASE("the library twin writes the same bytes")
    {
        const nlohmann::json cfg{{"config", (dir / "small.cfg").string()}};
        run_command("generate", cfg, dir / "twin");
        for (const auto& name : synth_artifact_names())
            CHECK(read_file(dir / "twin" / name) == read_file(dir / "ds" / name));
    }
}

TEST_CASE("ingest, preprocess and analyze an element")
{
    test::TempDir dir("cli_store");
    dir.write("db.csv", "bridge,elem,year,cond,insp\n130,1,1998,95,A\n130,1,2004,88,B\n130,1,2010,83,A\n"
                        "130,2,2004,,A\n");
    dir.write("map.txt", "structure=bridge\nelement=elem\nyear=year\ncondition=cond\ninspector=insp\n");
    const auto ing = cli("ingest --csv " + q(dir / "db.csv") + " --mapping " + q(dir / "map.txt") + " --out " +
                         q(dir / "ing"));
    REQUIRE(ing.code == 0);
    CHECK(std::filesystem::exists(dir / "ing" / "ingest_summary.txt"));

    REQUIRE(cli("preprocess --csv " + q(dir / "db.csv") + " --mapping " + q(dir / "map.txt") + " --out " +
                q(dir / "store"))
                .code == 0);
    const auto an = cli("analyze-element --store " + q(dir / "store") + " --bridge 130 --element 1 --forecast 10 --out " +
                        q(dir / "an"));
    REQUIRE(an.code == 0);
    int csv = 0, png = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "an"))
    {
        csv += e.path().extension() == ".csv";
        png += e.path().extension() == ".png";
    }
    CHECK(csv == 1);
    CHECK(png == 1);

    const auto missing = cli("analyze-element --store " + q(dir / "store") + " --bridge 130 --element 7 --out " +
                             q(dir / "an2"));
    CHECK(missing.code == 1);
    CHECK(missing.output.find("element") != std::string::npos);
}
