// Copyright (c) 2026 echosynth contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace echosynth {

// Base class for every error thrown by this library. The concrete type
// encodes the failure class; the CLI maps classes onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A numeric argument is outside its documented range.
class ParameterError : public Error {
public:
    using Error::Error;
};

// Tensor/mask shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A timestep or element index is out of range.
class IndexError : public Error {
public:
    using Error::Error;
};

// Inconsistent configuration: mode/conditioning mismatch, unknown keys,
// missing components.
class ConfigError : public Error {
public:
    using Error::Error;
};

// A documented call contract was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

// A prompt lexicon is missing a slot or does not match its recorded hash.
class LexiconError : public Error {
public:
    using Error::Error;
};

// The patient split cannot be formed.
class SplitError : public Error {
public:
    using Error::Error;
};

// A real/synthetic mix cannot be formed.
class MixError : public Error {
public:
    using Error::Error;
};

// On-disk content does not match its recorded hash.
class IntegrityError : public Error {
public:
    using Error::Error;
};

// Non-finite values or a failed numeric procedure.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace echosynth
