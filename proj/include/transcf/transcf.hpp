#pragma once

#include "transcf/analysis.hpp"
#include "transcf/config.hpp"
#include "transcf/dataset.hpp"
#include "transcf/embed.hpp"
#include "transcf/error.hpp"
#include "transcf/eval.hpp"
#include "transcf/model.hpp"
#include "transcf/trainer.hpp"
