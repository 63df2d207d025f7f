#pragma once

#include "ept/errors.hpp"
#include "ept/matrix.hpp"
#include "ept/autodiff.hpp"
#include "ept/gradcheck.hpp"
#include "ept/pca.hpp"
#include "ept/meta_subspace.hpp"
#include "ept/pyramid_experts.hpp"
#include "ept/gating_router.hpp"
#include "ept/ept_layer.hpp"
#include "ept/task_space.hpp"
#include "ept/training/config.hpp"
#include "ept/training/data.hpp"
#include "ept/training/backbone.hpp"
#include "ept/training/optimizer.hpp"
#include "ept/training/trainer.hpp"
#include "ept/training/ablation.hpp"
#include "ept/training/gradcheck_suite.hpp"
#include "ept/tooling/crc.hpp"
#include "ept/tooling/accounting.hpp"
#include "ept/tooling/checkpoint.hpp"
#include "ept/tooling/merge.hpp"
