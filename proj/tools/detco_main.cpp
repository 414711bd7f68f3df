#include "detco/cli.hpp"

int main(int argc, char** argv) { return detco::cli::dispatch(argc, argv); }
