#pragma once

#include "nvs/autodiff/ops.hpp"
#include "nvs/autodiff/optim.hpp"
#include "nvs/autodiff/tensor.hpp"
#include "nvs/binary_io.hpp"
#include "nvs/checkpoint.hpp"
#include "nvs/config.hpp"
#include "nvs/dataset.hpp"
#include "nvs/error.hpp"
#include "nvs/eval.hpp"
#include "nvs/loss.hpp"
#include "nvs/model.hpp"
#include "nvs/render.hpp"
#include "nvs/rng.hpp"
#include "nvs/shapes.hpp"
#include "nvs/train.hpp"
#include "nvs/viewsphere.hpp"
#include "nvs/voxelgrid.hpp"
