#pragma once

#include "epfgnn/checkpoint.hpp"
#include "epfgnn/config.hpp"
#include "epfgnn/dataset.hpp"
#include "epfgnn/dense_matrix.hpp"
#include "epfgnn/em.hpp"
#include "epfgnn/errors.hpp"
#include "epfgnn/gcn.hpp"
#include "epfgnn/graph.hpp"
#include "epfgnn/mrf.hpp"
#include "epfgnn/numerics.hpp"
#include "epfgnn/observed.hpp"
#include "epfgnn/oracle.hpp"
#include "epfgnn/report.hpp"
#include "epfgnn/rng.hpp"
#include "epfgnn/self_check.hpp"
