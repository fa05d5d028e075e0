#pragma once

#include <stdexcept>
#include <string>

namespace svp {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// geometry
struct DegenerateSegment : Error { using Error::Error; };
struct NearPolarLine : Error { using Error::Error; };
struct IndeterminateConsistency : Error { using Error::Error; };

// sphere_raster
struct IndexOutOfRange : Error { using Error::Error; };
struct EmptyInput : Error { using Error::Error; };

// synthgen
struct DegenerateScene : Error { using Error::Error; };

// coarse_net
struct ShapeMismatch : Error { using Error::Error; };
struct NonFiniteLoss : Error { using Error::Error; };
struct BadMagic : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct TruncatedFile : Error { using Error::Error; };

// em_refine
struct AllZeroGrid : Error { using Error::Error; };
struct NoCandidates : Error { using Error::Error; };

// horizon
struct NoValidTriplet : Error { using Error::Error; };
struct DegenerateFit : Error { using Error::Error; };
struct VerticalLine : Error { using Error::Error; };
struct ImaginaryFocal : Error { using Error::Error; };
struct CollinearTriplet : Error { using Error::Error; };

// harness
struct TooFewSegments : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

}  // namespace svp
