#pragma once

// Obfuscated neural-network training: augment a model and dataset with
// decoy sub-networks and interleaved noise, train the augmented pair with
// plain SGD, extract the original trained model, and quantify the
// privacy/overhead trade-off.

#include "amalgam/attack.hpp"
#include "amalgam/autodiff.hpp"
#include "amalgam/data_augment.hpp"
#include "amalgam/dataset.hpp"
#include "amalgam/executor.hpp"
#include "amalgam/extractor.hpp"
#include "amalgam/fixtures.hpp"
#include "amalgam/model_augment.hpp"
#include "amalgam/model_ir.hpp"
#include "amalgam/privacy.hpp"
#include "amalgam/secret.hpp"
#include "amalgam/tensor.hpp"
#include "amalgam/trainer.hpp"
