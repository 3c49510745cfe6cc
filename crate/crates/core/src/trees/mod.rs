//! Decision trees and random forests.

mod forest;
mod tree;

pub use forest::{fit_random_forest, fit_random_forest_regressor, ForestConfig, ForestMode, ForestModel};
pub use tree::{
    argmax, best_split, fit_decision_tree, fit_regression_tree, impurity, Criterion, DecisionTree, Split, TreeConfig,
    TreeNode, TIE_EPS,
};
