#pragma once

#include "s3f/autodiff.hpp"
#include "s3f/checkpoint.hpp"
#include "s3f/config.hpp"
#include "s3f/corpus.hpp"
#include "s3f/csv.hpp"
#include "s3f/errors.hpp"
#include "s3f/eval.hpp"
#include "s3f/geometry.hpp"
#include "s3f/model.hpp"
#include "s3f/parallel.hpp"
#include "s3f/protein_io.hpp"
#include "s3f/residue.hpp"
#include "s3f/rng.hpp"
#include "s3f/scoring.hpp"
#include "s3f/spectral.hpp"
#include "s3f/surface.hpp"
#include "s3f/training.hpp"
#include "s3f/types.hpp"
