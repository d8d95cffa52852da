/* Copyright 2026 The cascade-seg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#ifndef CSEG_ERRORS_HPP_
#define CSEG_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace cseg {

// Base class for all pipeline errors. The CLI maps subtrees of this
// hierarchy onto stable process exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File / format errors -------------------------------------------------------
class IoError : public Error {
 public:
  using Error::Error;
};
class MissingFile : public IoError {
 public:
  using IoError::IoError;
};
class BadMagic : public IoError {
 public:
  using IoError::IoError;
};
class DimensionOverflow : public IoError {
 public:
  using IoError::IoError;
};
class TruncatedPayload : public IoError {
 public:
  using IoError::IoError;
};

// Volume / patch errors ------------------------------------------------------
class DegenerateVolume : public Error {
 public:
  using Error::Error;
};
class CoordOutOfVolume : public Error {
 public:
  using Error::Error;
};
class EvenPatchSize : public Error {
 public:
  using Error::Error;
};

// Engine errors --------------------------------------------------------------
class ShapeMismatch : public Error {
 public:
  using Error::Error;
};
class SingleSampleTrainBatch : public Error {
 public:
  using Error::Error;
};
class NonFiniteInput : public Error {
 public:
  using Error::Error;
};
class NoForwardState : public Error {
 public:
  using Error::Error;
};

// Training errors ------------------------------------------------------------
class TrainingError : public Error {
 public:
  using Error::Error;
};
class MissingFlairChannel : public TrainingError {
 public:
  using TrainingError::TrainingError;
};
class MissingMask : public TrainingError {
 public:
  using TrainingError::TrainingError;
};
class NoPositives : public TrainingError {
 public:
  using TrainingError::TrainingError;
};
class SingleClassData : public TrainingError {
 public:
  using TrainingError::TrainingError;
};
class EmptyPatchSet : public TrainingError {
 public:
  using TrainingError::TrainingError;
};
class UntrainedNetwork : public TrainingError {
 public:
  using TrainingError::TrainingError;
};

// Inference / evaluation errors ----------------------------------------------
class ChannelMismatch : public Error {
 public:
  using Error::Error;
};
class NoMask : public Error {
 public:
  using Error::Error;
};
class EmptyGroundTruth : public Error {
 public:
  using Error::Error;
};
class UndefinedRatio : public Error {
 public:
  using Error::Error;
};
class DegenerateVariance : public Error {
 public:
  using Error::Error;
};
class EvaluationPairingError : public Error {
 public:
  using Error::Error;
};

// Phantom errors -------------------------------------------------------------
class PlacementFailure : public Error {
 public:
  using Error::Error;
};

// Config errors --------------------------------------------------------------
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace cseg

#endif  // CSEG_ERRORS_HPP_
