#include "stfuse/commands.hpp"

int main(int argc, char** argv) { return stfuse::cli::dispatch(argc, argv); }
