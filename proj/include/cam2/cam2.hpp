#pragma once

#include "cam2/attention.hpp"
#include "cam2/checkpoint.hpp"
#include "cam2/corpus.hpp"
#include "cam2/embed.hpp"
#include "cam2/model.hpp"
#include "cam2/report.hpp"
#include "cam2/train.hpp"
