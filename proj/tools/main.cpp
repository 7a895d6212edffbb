#include "poisson_posterior/cli.hpp"

int main(int argc, char** argv) { return poisson_posterior::cli::dispatch(argc, argv); }
