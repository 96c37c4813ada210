#include <gtest/gtest.h>

#include "tide/config.hpp"
#include "tide/errors.hpp"

using namespace tide;

TEST(Config, DefaultsValidate) {
  TideConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.beta_z, 1e-3);
  EXPECT_EQ(c.prop_alpha, 0.5);
  EXPECT_EQ(c.prop_k, 2);
  EXPECT_EQ(c.lambda_oe, 1.0);
  EXPECT_EQ(c.hidden, 64u);
}

TEST(Config, GridEnforced) {
  for (double v : {0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0}) {
    TideConfig c;
    c.alpha2 = v;
    EXPECT_NO_THROW(c.validate()) << v;
  }
  TideConfig c;
  c.beta_v = 0.005;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.lambda_cind = 2.0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Config, MarginsCheckedOnlyWithExposure) {
  TideConfig c;
  c.t_id = 0;
  c.t_ood = -3;
  EXPECT_NO_THROW(c.validate());
  c.exposure_enabled = true;
  EXPECT_THROW(c.validate(), ContractError);
  c.t_id = -3;
  c.t_ood = -2.5;
  EXPECT_THROW(c.validate(), ContractError);
  c.t_ood = -10;
  EXPECT_THROW(c.validate(), ContractError);
  c.t_ood = 0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, OtherRanges) {
  TideConfig c;
  c.prop_alpha = 1.5;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.lr = 0;
  EXPECT_THROW(c.validate(), ContractError);
  c = {};
  c.epochs = -1;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Config, JsonRoundTripAndOverrides) {
  TideConfig c;
  c.alpha3 = 0.1;
  c.objective_mode = ObjectiveMode::kIbCind;
  c.seed = 42;
  const TideConfig back = TideConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());

  TideConfig partial = TideConfig::from_json({{"epochs", 5}});
  EXPECT_EQ(partial.epochs, 5);
  EXPECT_EQ(partial.beta_q, 1e-3);
  partial.merge_json({{"objective_mode", "sl"}});
  EXPECT_EQ(partial.objective_mode, ObjectiveMode::kSl);
  EXPECT_EQ(partial.epochs, 5);
}

TEST(Config, UnknownKeysAndBadTypesRejected) {
  EXPECT_THROW(TideConfig::from_json({{"betaz", 0.1}}), ContractError);
  EXPECT_THROW(TideConfig::from_json({{"epochs", "many"}}), ContractError);
  EXPECT_THROW(TideConfig::from_json({{"objective_mode", "vae"}}), ContractError);
}

TEST(Config, HashDistinguishesConfigs) {
  TideConfig a, b;
  b.lr = 0.02;
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(ObjectiveMode, StringRoundTrip) {
  for (auto m : {ObjectiveMode::kSl, ObjectiveMode::kIb, ObjectiveMode::kIbCind, ObjectiveMode::kTide}) {
    EXPECT_EQ(objective_mode_from_string(to_string(m)), m);
  }
}
