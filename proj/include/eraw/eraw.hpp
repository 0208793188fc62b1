#pragma once

#include "eraw/checkpoint.hpp"
#include "eraw/config.hpp"
#include "eraw/groundtruth.hpp"
#include "eraw/harness.hpp"
#include "eraw/image_io.hpp"
#include "eraw/model.hpp"
#include "eraw/objectives.hpp"
#include "eraw/optim.hpp"
#include "eraw/synthdata.hpp"
