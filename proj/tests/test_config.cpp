#include <gtest/gtest.h>

#include "ceam/config.hpp"

using namespace ceam;

TEST(KeyValueConfig, ParsesTypedValuesAndComments) {
    auto kv = KeyValueConfig::parse("# comment\nseed = 7\nlearning_rate=0.025\n\nablation=mean_aggregate\nflag=true\n");
    EXPECT_EQ(kv.get_int("seed", 0), 7);
    EXPECT_DOUBLE_EQ(kv.get_double("learning_rate", 0), 0.025);
    EXPECT_EQ(kv.get_string("ablation", ""), "mean_aggregate");
    EXPECT_TRUE(kv.get_bool("flag", false));
    EXPECT_EQ(kv.get_int("missing", 3), 3);
    EXPECT_FALSE(kv.has("missing"));
}

TEST(KeyValueConfig, BadNumberNamesKey) {
    auto kv = KeyValueConfig::parse("epochs=lots\n");
    try {
        kv.get_int("epochs", 1);
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("epochs"), std::string::npos);
    }
}

TEST(KeyValueConfig, UnknownKeyNamed) {
    auto kv = KeyValueConfig::parse("seed=1\nlearnin_rate=0.1\n");
    try {
        kv.require_known({"seed", "learning_rate"});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("learnin_rate"), std::string::npos);
    }
}

TEST(KeyValueConfig, RelationLinesBuildSchema) {
    auto kv = KeyValueConfig::parse("relation hasVendor profiling=true\nrelation hasImpact profiling=false\n");
    auto schema = kv.schema_or(cert_nvd_schema());
    ASSERT_EQ(schema.size(), 2u);
    EXPECT_TRUE(schema.is_profiling(0));
    EXPECT_DOUBLE_EQ(schema.profiling_fraction, 0.5);
    EXPECT_EQ(KeyValueConfig::parse("seed=1\n").schema_or(cert_nvd_schema()), cert_nvd_schema());
}

TEST(KeyValueConfig, SerializeRoundTrips) {
    auto kv = KeyValueConfig::parse("b=2\na=1\n" + schema_to_config(sf_nvd_schema()));
    auto text = kv.serialize();
    auto again = KeyValueConfig::parse(text);
    EXPECT_EQ(again.serialize(), text);
    EXPECT_EQ(again.schema_or({}), sf_nvd_schema());
    EXPECT_LT(text.find("a=1"), text.find("b=2"));
}

TEST(KeyValueConfig, MalformedLineRejected) {
    EXPECT_THROW(KeyValueConfig::parse("just words\n"), ConfigError);
}
