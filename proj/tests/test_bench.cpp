// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <sstream>

#include "srigl/bench.hpp"

using namespace srigl;

namespace {

BenchConfig tiny() {
    BenchConfig c;
    c.n = 4;
    c.d = 512;
    c.batches = {1, 8};
    c.repeats = 5;
    c.warmup = 1;
    return c;
}

}  // namespace

TEST(BenchConfig, Validation) {
    auto c = tiny();
    EXPECT_NO_THROW(c.validate());
    c.repeats = 4;
    EXPECT_THROW(c.validate(), Error);
    c = tiny();
    c.sparsities = {1.0};
    EXPECT_THROW(c.validate(), Error);
    c = tiny();
    c.batches = {};
    EXPECT_THROW(c.validate(), Error);
    c = tiny();
    c.threads = 0;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Bench, RowLayout) {
    const auto rows = run_bench(tiny());
    ASSERT_EQ(rows.size(), 2u * 6u);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t i = 0; i < 3; ++i) {
            const auto& dense = rows[b * 6 + i];
            const auto& cond = rows[b * 6 + 3 + i];
            EXPECT_EQ(dense.impl, "dense");
            EXPECT_EQ(cond.impl, "condensed");
            EXPECT_EQ(dense.sparsity, cond.sparsity);
            EXPECT_EQ(dense.mean_s, rows[b * 6].mean_s);
            EXPECT_GT(cond.mean_s, 0.0);
            EXPECT_GE(cond.std_s, 0.0);
            EXPECT_EQ(cond.repeats, 5u);
        }
    }
}

TEST(Bench, TimeCallCountsRepeats) {
    int calls = 0;
    const auto m = time_call([&] { ++calls; }, 6, 3);
    EXPECT_EQ(calls, 9);
    EXPECT_GE(m.mean, 0.0);
}

TEST(Bench, CsvSchema) {
    std::ostringstream os;
    write_bench_csv(os, {{"condensed", 0.9, 16, 10, 2, 1.5e-3, 2e-5}});
    EXPECT_EQ(os.str(), "impl,sparsity,batch,repeats,threads,mean_s,std_s\n"
                        "condensed,0.9000,16,10,2,1.500000000e-03,2.000000000e-05\n");
}
