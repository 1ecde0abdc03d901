#pragma once

// Umbrella header: the whole library.

#include "timesiam/autodiff.hpp"
#include "timesiam/checkpoint.hpp"
#include "timesiam/common.hpp"
#include "timesiam/config.hpp"
#include "timesiam/data.hpp"
#include "timesiam/embedding.hpp"
#include "timesiam/finetune.hpp"
#include "timesiam/metrics.hpp"
#include "timesiam/model.hpp"
#include "timesiam/optim.hpp"
#include "timesiam/pca.hpp"
#include "timesiam/synthetic.hpp"
#include "timesiam/train.hpp"
