// Writes a small labeled WAV corpus plus manifest.csv into argv[1].
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include "aum/toy.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixtures <out_dir>\n";
        return 2;
    }
    namespace fs = std::filesystem;
    fs::path dir = argv[1];
    fs::create_directories(dir);
    aum::ToyConfig cfg;
    std::mt19937 rng(1234);
    std::ofstream manifest(dir / "manifest.csv");
    for (int i = 0; i < 8; ++i) {
        int label = i % 2;
        aum::Waveform w = aum::make_toy_clip(label, rng, cfg);
        fs::path p = dir / ("clip" + std::to_string(i) + ".wav");
        aum::save_waveform(w, p.string());
        manifest << p.string() << "," << label << "\n";
    }
    return 0;
}
